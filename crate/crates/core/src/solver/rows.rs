//! Euclidean projection onto an intersection of halfspaces and hyperplanes.
//!
//! Dykstra's cyclic projection restricted to halfspaces reduces to Hildreth's
//! dual coordinate ascent: every increment is a multiple `λ_j a_j` of a row
//! normal, so the iteration lives in the `m`-dimensional multiplier space and a
//! sweep costs `O(m²)` through the Gram matrix. After the sweeps settle, the
//! active set is solved exactly.

use nalgebra::{DMatrix, DVector};

use crate::constraints::ConstraintSet;

const MAX_SWEEPS: usize = 2_000;

pub(crate) struct RowProjector {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    is_eq: Vec<bool>,
    gram: Vec<f64>,
}

impl RowProjector {
    pub fn new(cs: &ConstraintSet) -> Self {
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        let mut is_eq = Vec::new();
        for r in cs.inequalities() {
            rows.push(r.coeffs.clone());
            rhs.push(r.rhs);
            is_eq.push(false);
        }
        for r in cs.equalities() {
            rows.push(r.coeffs.clone());
            rhs.push(r.rhs);
            is_eq.push(true);
        }
        let m = rows.len();
        let mut gram = vec![0.0; m * m];
        for i in 0..m {
            for j in i..m {
                let g = dot(&rows[i], &rows[j]);
                gram[i * m + j] = g;
                gram[j * m + i] = g;
            }
        }
        RowProjector { rows, rhs, is_eq, gram }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Project `v` into `out`, warm-starting from and updating `lambda`.
    pub fn project(&self, v: &[f64], lambda: &mut Vec<f64>, out: &mut [f64]) {
        let m = self.len();
        if lambda.len() != m {
            *lambda = vec![0.0; m];
        }
        let s: Vec<f64> = self.rows.iter().zip(&self.rhs).map(|(r, b)| dot(r, v) - b).collect();
        let mut q = vec![0.0; m];
        for i in 0..m {
            q[i] = (0..m).map(|j| self.gram[i * m + j] * lambda[j]).sum();
        }
        let scale = 1.0 + v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        for _ in 0..MAX_SWEEPS {
            let mut change = 0.0f64;
            for j in 0..m {
                let d = self.gram[j * m + j];
                if d <= 0.0 {
                    continue;
                }
                let step = (s[j] - q[j]) / d;
                let new = if self.is_eq[j] { lambda[j] + step } else { (lambda[j] + step).max(0.0) };
                let delta = new - lambda[j];
                if delta != 0.0 {
                    lambda[j] = new;
                    for i in 0..m {
                        q[i] += delta * self.gram[i * m + j];
                    }
                    change = change.max(delta.abs() * d.sqrt());
                }
            }
            if change <= 1e-10 * scale {
                break;
            }
        }
        self.refine(&s, lambda);
        out.copy_from_slice(v);
        for (j, row) in self.rows.iter().enumerate() {
            if lambda[j] != 0.0 {
                for (o, a) in out.iter_mut().zip(row) {
                    *o -= lambda[j] * a;
                }
            }
        }
    }

    // Solve the KKT system on the current active set; keep the result only if
    // it is dual- and primal-feasible.
    fn refine(&self, s: &[f64], lambda: &mut [f64]) {
        let m = self.len();
        let active: Vec<usize> = (0..m).filter(|&j| self.is_eq[j] || lambda[j] > 0.0).collect();
        if active.is_empty() {
            return;
        }
        let k = active.len();
        let a = DMatrix::from_fn(k, k, |i, j| self.gram[active[i] * m + active[j]]);
        let b = DVector::from_iterator(k, active.iter().map(|&j| s[j]));
        let Some(sol) = a.lu().solve(&b) else { return };
        let mut cand = vec![0.0; m];
        for (i, &j) in active.iter().enumerate() {
            if !self.is_eq[j] && sol[i] < 0.0 {
                return;
            }
            cand[j] = sol[i];
        }
        let tol = 1e-12 * (1.0 + s.iter().fold(0.0f64, |a, x| a.max(x.abs())));
        for j in 0..m {
            let r = s[j] - (0..m).map(|i| self.gram[j * m + i] * cand[i]).sum::<f64>();
            let bad = if self.is_eq[j] { r.abs() > tol } else { r > tol };
            if bad {
                return;
            }
        }
        lambda.copy_from_slice(&cand);
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
