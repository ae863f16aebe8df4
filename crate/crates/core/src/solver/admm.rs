//! Consensus ADMM over the extended variable `(z, u)`.
//!
//! The objective is split into blocks, each with a cheap exact proximal map:
//!
//! * loss block: `Σ_j w_j g(z − a_j)` plus coordinate bounds (closed-form
//!   scalar prox followed by clamping),
//! * row block: indicator of the halfspaces and hyperplanes (Hildreth),
//! * ball block (optional): indicator of `{z : Σ g(z − c) ≤ R}`.
//!
//! Iteration (scaled form, `K` blocks):
//!
//! ```text
//! x_i ← prox_i(z̄ − u_i)
//! z̄  ← mean_i(x_i + u_i)
//! u_i ← u_i + x_i − z̄
//! ```
//!
//! with residual balancing on the penalty ρ.

use crate::constraints::ConstraintSet;
use crate::losses::{prox_terms, LossSpec, Term};

use super::ball::project_onto_loss_ball;
use super::rows::RowProjector;
use super::{SolverOptions, WarmStart};

pub(crate) struct Ball<'a> {
    pub center: &'a [f64],
    /// Radius in unnormalized penalty units, `n β`.
    pub radius: f64,
}

pub(crate) struct Outcome {
    pub extended: Vec<f64>,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The finishing step produced `extended`.
    pub finished: bool,
    pub warm: WarmStart,
}

/// Attempts an exact solution from an approximate one; `guess` is the
/// distance under which bounds, kinks and rows count as active.
pub(crate) type Finish<'a> = &'a dyn Fn(&[f64], f64) -> Option<Vec<f64>>;

const BALANCE_UNTIL: usize = 1_000;

#[derive(Clone, Copy, PartialEq)]
enum Block {
    Loss,
    Rows,
    Ball,
}

pub(crate) fn solve(
    loss: &LossSpec,
    terms: &[(f64, &[f64])],
    cs: &ConstraintSet,
    ball: Option<Ball<'_>>,
    start: &[f64],
    warm: Option<&WarmStart>,
    opts: &SolverOptions,
    finish: Option<Finish<'_>>,
) -> Outcome {
    let n = cs.n();
    let dim = cs.dim();
    let (lo, hi) = (cs.lower(), cs.upper());
    let rows = RowProjector::new(cs);

    let mut blocks = vec![Block::Loss];
    if !rows.is_empty() {
        blocks.push(Block::Rows);
    }
    if ball.is_some() {
        blocks.push(Block::Ball);
    }
    let k = blocks.len();

    let mut zbar: Vec<f64>;
    let mut u: Vec<Vec<f64>>;
    let mut lambda: Vec<f64>;
    let mut rho: f64;
    match warm.filter(|w| opts.warm_start && w.zbar.len() == dim && w.duals.len() == k) {
        Some(w) => {
            zbar = w.zbar.clone();
            u = w.duals.clone();
            lambda = w.row_multipliers.clone();
            rho = w.rho;
        }
        None => {
            zbar = cs.extend(start);
            u = vec![vec![0.0; dim]; k];
            lambda = Vec::new();
            rho = opts.rho;
        }
    }
    let mut x = vec![vec![0.0; dim]; k];
    let mut v = vec![0.0; dim];
    let mut term_buf: Vec<Term> = Vec::with_capacity(terms.len());

    let mut primal = f64::INFINITY;
    let mut dual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut finished: Option<Vec<f64>> = None;
    let mut next_finish = 20;

    while iterations < opts.max_iterations {
        iterations += 1;
        for (bi, block) in blocks.iter().enumerate() {
            for j in 0..dim {
                v[j] = zbar[j] - u[bi][j];
            }
            let xi = &mut x[bi];
            match block {
                Block::Loss => {
                    for j in 0..n {
                        term_buf.clear();
                        term_buf.extend(terms.iter().map(|(w, a)| Term { weight: *w, anchor: a[j] }));
                        xi[j] = prox_terms(loss, rho, v[j], &term_buf).clamp(lo[j], hi[j]);
                    }
                    for j in n..dim {
                        xi[j] = v[j].clamp(lo[j], hi[j]);
                    }
                }
                Block::Rows => rows.project(&v, &mut lambda, xi),
                Block::Ball => {
                    let b = ball.as_ref().expect("ball block without ball");
                    project_onto_loss_ball(loss, b.center, b.radius, &v[..n], &mut xi[..n]);
                    xi[n..].copy_from_slice(&v[n..]);
                }
            }
        }
        let mut change = 0.0f64;
        for j in 0..dim {
            let mean = (0..k).map(|bi| x[bi][j] + u[bi][j]).sum::<f64>() / k as f64;
            change = change.max((mean - zbar[j]).abs());
            zbar[j] = mean;
        }
        let mut r = 0.0f64;
        for bi in 0..k {
            for j in 0..dim {
                let d = x[bi][j] - zbar[j];
                u[bi][j] += d;
                r = r.max(d.abs());
            }
        }
        primal = r;
        dual = rho * change;
        if primal <= opts.tolerance && dual <= opts.tolerance {
            converged = true;
            break;
        }
        if let Some(f) = finish.filter(|_| iterations >= next_finish && primal.max(dual) <= 1e-3) {
            next_finish = iterations + (iterations / 2).max(20);
            let guess = (10.0 * primal.max(dual)).clamp(1e-9, 1e-3);
            if let Some(z) = f(&zbar, guess) {
                finished = Some(z);
                converged = true;
                break;
            }
        }
        // Penalty changes stop after a while; ADMM needs a fixed ρ to settle.
        if k > 1 && iterations % 10 == 0 && iterations <= BALANCE_UNTIL {
            let factor = if primal > 10.0 * dual {
                2.0
            } else if dual > 10.0 * primal {
                0.5
            } else {
                1.0
            };
            if factor != 1.0 && (1e-6..=1e6).contains(&(rho * factor)) {
                rho *= factor;
                for ui in u.iter_mut() {
                    ui.iter_mut().for_each(|e| *e /= factor);
                }
            }
        }
    }

    let pick = blocks.iter().position(|b| *b == Block::Rows).or_else(|| blocks.iter().position(|b| *b == Block::Ball));
    let is_finished = finished.is_some();
    let extended = match (finished, pick) {
        (Some(z), _) => z,
        (None, Some(bi)) => x[bi].clone(),
        (None, None) => x[0].clone(),
    };
    Outcome {
        extended,
        primal_residual: primal,
        dual_residual: dual,
        iterations,
        converged,
        finished: is_finished,
        warm: WarmStart { zbar, duals: u, row_multipliers: lambda, rho },
    }
}
