//! Gradient boosted regression trees with exact splits.
//!
//! Trees are grown on the negative loss gradient with a squared-error split
//! criterion. Leaf values minimize the actual loss over the rows in the leaf:
//! mean residual for MSE, median for MAE, exact 1-D minimizer for Huber.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::losses::{prox_terms, LossSpec, Term};

use super::LearnerSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub init: f64,
    pub learning_rate: f64,
    pub n_features: usize,
    /// Each tree is a node arena rooted at index 0.
    pub trees: Vec<Vec<Node>>,
}

impl Ensemble {
    pub fn predict_row(&self, x: &DMatrix<f64>, i: usize) -> f64 {
        let mut f = self.init;
        for tree in &self.trees {
            f += self.learning_rate * leaf_value(tree, x, i);
        }
        f
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows()).map(|i| self.predict_row(x, i)).collect()
    }
}

fn leaf_value(tree: &[Node], x: &DMatrix<f64>, i: usize) -> f64 {
    let mut k = 0;
    loop {
        match tree[k] {
            Node::Leaf { value } => return value,
            Node::Split { feature, threshold, left, right } => {
                k = if x[(i, feature)] <= threshold { left } else { right };
            }
        }
    }
}

pub(crate) fn fit(spec: &LearnerSpec, x: &DMatrix<f64>, y: &[f64], loss: &LossSpec) -> Ensemble {
    let (n, d) = x.shape();
    let order: Vec<Vec<usize>> = (0..d)
        .map(|j| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| x[(a, j)].total_cmp(&x[(b, j)]));
            idx
        })
        .collect();

    let init = leaf_minimizer(loss, y.iter().copied());
    let mut ensemble = Ensemble { init, learning_rate: spec.learning_rate, n_features: d, trees: Vec::with_capacity(spec.trees) };
    let mut f = vec![init; n];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sample_size = ((spec.subsample * n as f64).round() as usize).clamp(1, n);
    let mut all: Vec<usize> = (0..n).collect();

    for _ in 0..spec.trees {
        let grad: Vec<f64> = (0..n).map(|i| -loss.penalty_derivative(f[i] - y[i])).collect();
        let rows: Vec<usize> = if sample_size < n {
            all.shuffle(&mut rng);
            let mut r = all[..sample_size].to_vec();
            r.sort_unstable();
            r
        } else {
            (0..n).collect()
        };
        let mut grower = Grower { spec, x, order: &order, grad: &grad, in_node: vec![false; n], nodes: Vec::new() };
        let mut leaves = Vec::new();
        grower.grow(rows, 0, &mut leaves);
        let mut nodes = grower.nodes;
        for (node, members) in leaves {
            let value = leaf_minimizer(loss, members.iter().map(|&i| y[i] - f[i]));
            nodes[node] = Node::Leaf { value };
        }
        for (i, fi) in f.iter_mut().enumerate() {
            *fi += spec.learning_rate * leaf_value(&nodes, x, i);
        }
        ensemble.trees.push(nodes);
    }
    ensemble
}

// argmin_γ Σ g(γ − r_i): a zero-curvature composite prox.
fn leaf_minimizer(loss: &LossSpec, residuals: impl Iterator<Item = f64>) -> f64 {
    let terms: Vec<Term> = residuals.map(|r| Term { weight: 1.0, anchor: r }).collect();
    if terms.is_empty() {
        return 0.0;
    }
    if let LossSpec::Mse = loss {
        return terms.iter().map(|t| t.anchor).sum::<f64>() / terms.len() as f64;
    }
    prox_terms(loss, 0.0, 0.0, &terms)
}

struct Grower<'a> {
    spec: &'a LearnerSpec,
    x: &'a DMatrix<f64>,
    order: &'a [Vec<usize>],
    grad: &'a [f64],
    in_node: Vec<bool>,
    nodes: Vec<Node>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Grower<'_> {
    // Pushes a node for `rows` and returns its index; leaves are recorded with
    // their members so values can be filled in afterwards.
    fn grow(&mut self, rows: Vec<usize>, depth: usize, leaves: &mut Vec<(usize, Vec<usize>)>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let split = if depth < self.spec.max_depth { self.best_split(&rows) } else { None };
        let Some(s) = split else {
            leaves.push((id, rows));
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[(i, s.feature)] <= s.threshold);
        let left = self.grow(l, depth + 1, leaves);
        let right = self.grow(r, depth + 1, leaves);
        self.nodes[id] = Node::Split { feature: s.feature, threshold: s.threshold, left, right };
        id
    }

    fn best_split(&mut self, rows: &[usize]) -> Option<BestSplit> {
        let min_leaf = self.spec.min_samples_leaf;
        let m = rows.len();
        if m < 2 * min_leaf {
            return None;
        }
        for &i in rows {
            self.in_node[i] = true;
        }
        let total: f64 = rows.iter().map(|&i| self.grad[i]).sum();
        let base = total * total / m as f64;
        let mut best: Option<BestSplit> = None;
        let mut sorted = Vec::with_capacity(m);
        for (j, ord) in self.order.iter().enumerate() {
            sorted.clear();
            sorted.extend(ord.iter().copied().filter(|&i| self.in_node[i]));
            let mut left_sum = 0.0;
            for k in 0..m - 1 {
                left_sum += self.grad[sorted[k]];
                let nl = k + 1;
                let (a, b) = (self.x[(sorted[k], j)], self.x[(sorted[k + 1], j)]);
                if nl < min_leaf || m - nl < min_leaf || a == b {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / (m - nl) as f64 - base;
                if gain > 1e-14 && best.as_ref().map_or(true, |s| gain > s.gain) {
                    best = Some(BestSplit { gain, feature: j, threshold: 0.5 * (a + b) });
                }
            }
        }
        for &i in rows {
            self.in_node[i] = false;
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{fit as fit_model, LearnerKind};
    use crate::losses::loss;

    fn stump_spec() -> LearnerSpec {
        LearnerSpec {
            kind: LearnerKind::GradientBoostedTrees,
            trees: 1,
            max_depth: 1,
            learning_rate: 1.0,
            min_samples_leaf: 1,
            ..LearnerSpec::default()
        }
    }

    #[test]
    fn empty_ensemble_is_initial_constant() {
        let e = Ensemble { init: 0.4, learning_rate: 0.1, n_features: 1, trees: vec![] };
        assert_eq!(e.predict(&DMatrix::zeros(3, 1)), vec![0.4; 3]);
    }

    #[test]
    fn stump_matches_brute_force_threshold_search() {
        let xs = [0.1, 0.5, 0.3, 0.9, 0.7, 0.2, 0.6, 0.8];
        let y = [0.2, 0.6, 0.1, 0.9, 0.7, 0.3, 0.5, 1.0];
        let x = DMatrix::from_column_slice(8, 1, &xs);
        let m = fit_model(&stump_spec(), &x, &y, &LossSpec::Mse).unwrap();

        // Oracle: every threshold between distinct sorted values, group means.
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut best = f64::INFINITY;
        for w in sorted.windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            let (l, r): (Vec<f64>, Vec<f64>) = (0..8).map(|i| (xs[i], y[i])).fold((vec![], vec![]), |(mut l, mut r), (xi, yi)| {
                if xi <= t { l.push(yi) } else { r.push(yi) }
                (l, r)
            });
            let sse = |v: &[f64]| {
                let mu = v.iter().sum::<f64>() / v.len() as f64;
                v.iter().map(|a| (a - mu).powi(2)).sum::<f64>()
            };
            best = best.min((sse(&l) + sse(&r)) / 8.0);
        }
        assert!((m.training_loss - best).abs() < 1e-12, "{} vs {}", m.training_loss, best);
    }

    #[test]
    fn stump_output_is_two_level() {
        let x = DMatrix::from_column_slice(6, 1, &[0.0, 0.1, 0.2, 0.8, 0.9, 1.0]);
        let y = [0.1, 0.2, 0.0, 0.9, 1.0, 0.8];
        let m = fit_model(&stump_spec(), &x, &y, &LossSpec::Mse).unwrap();
        let mut levels = m.training_predictions.clone();
        levels.sort_by(f64::total_cmp);
        levels.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
        assert_eq!(levels.len(), 2);
        assert!((levels[0] - 0.1).abs() < 1e-12 && (levels[1] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn training_loss_never_increases_with_rounds() {
        let n = 40;
        let x = DMatrix::from_fn(n, 2, |i, j| ((i * 7 + j * 13) % 17) as f64 / 16.0);
        let y: Vec<f64> = (0..n).map(|i| ((i * 5) % 11) as f64 / 10.0).collect();
        for l in [LossSpec::Mse, LossSpec::Mae, LossSpec::huber(0.1).unwrap()] {
            let mut prev = f64::INFINITY;
            for trees in 1..15 {
                let spec = LearnerSpec { trees, min_samples_leaf: 2, ..LearnerSpec::gbt() };
                let m = fit_model(&spec, &x, &y, &l).unwrap();
                let cur = loss(&l, &m.training_predictions, &y).unwrap();
                assert!(cur <= prev + 1e-15, "{l:?} trees={trees}: {cur} > {prev}");
                prev = cur;
            }
        }
    }

    #[test]
    fn mae_leaf_is_median() {
        assert_eq!(leaf_minimizer(&LossSpec::Mae, [0.1, 0.9, 0.3].into_iter()), 0.3);
    }
}
