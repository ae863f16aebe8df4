//! Active-set refinement of a squared-loss projection.
//!
//! Given an approximate projection `x` of `a` onto `{lower ≤ x ≤ upper, Gx ≤ h,
//! Ex = e}`, guess the active bounds and rows, solve the reduced KKT system
//! exactly, and repair the guess a bounded number of times. The result is
//! returned only when every KKT condition holds.

use nalgebra::{DMatrix, DVector};

use crate::constraints::ConstraintSet;

use super::rows::dot;

#[derive(Clone, Copy, PartialEq)]
enum Fix {
    Free,
    Lower,
    Upper,
}

pub(crate) fn polish_squared(cs: &ConstraintSet, anchor: &[f64], x: &[f64]) -> Option<Vec<f64>> {
    if cs.n_aux() != 0 {
        return None;
    }
    let dim = cs.dim();
    let (lo, hi) = (cs.lower(), cs.upper());
    let ineq = cs.inequalities();
    let eq = cs.equalities();
    let guess = 1e-6;

    let mut fix: Vec<Fix> = (0..dim)
        .map(|k| {
            if x[k] <= lo[k] + guess {
                Fix::Lower
            } else if x[k] >= hi[k] - guess {
                Fix::Upper
            } else {
                Fix::Free
            }
        })
        .collect();
    let mut active: Vec<bool> = ineq.iter().map(|r| r.eval(x) >= r.rhs - guess * norm(&r.coeffs)).collect();

    for _ in 0..(4 * (dim + ineq.len()) + 10).min(200) {
        // (coefficients, rhs, index into `ineq` for inequality rows)
        let rows: Vec<(&[f64], f64, Option<usize>)> = ineq
            .iter()
            .enumerate()
            .filter(|(j, _)| active[*j])
            .map(|(j, r)| (r.coeffs.as_slice(), r.rhs, Some(j)))
            .chain(eq.iter().map(|r| (r.coeffs.as_slice(), r.rhs, None)))
            .collect();
        let mut z: Vec<f64> = (0..dim)
            .map(|k| match fix[k] {
                Fix::Free => anchor[k],
                Fix::Lower => lo[k],
                Fix::Upper => hi[k],
            })
            .collect();
        let free: Vec<usize> = (0..dim).filter(|&k| fix[k] == Fix::Free).collect();
        let m = rows.len();
        let mut lambda = vec![0.0; m];
        if m > 0 {
            // Rows restricted to the free coordinates; fixed ones move to the rhs.
            let gram = DMatrix::from_fn(m, m, |i, j| free.iter().map(|&k| rows[i].0[k] * rows[j].0[k]).sum());
            let rhs = DVector::from_fn(m, |i, _| dot(rows[i].0, &z) - rows[i].1);
            let sol = gram.lu().solve(&rhs)?;
            lambda.copy_from_slice(sol.as_slice());
            for &k in &free {
                z[k] -= (0..m).map(|i| lambda[i] * rows[i].0[k]).sum::<f64>();
            }
        }

        // Dual feasibility of active inequality rows.
        let worst_row = (0..m)
            .filter(|&i| rows[i].2.is_some() && lambda[i] < -1e-12)
            .min_by(|&a, &b| lambda[a].total_cmp(&lambda[b]));
        if let Some(j) = worst_row.and_then(|i| rows[i].2) {
            active[j] = false;
            continue;
        }

        // Primal feasibility of free coordinates.
        let tol = 1e-12;
        if let Some(&k) = free.iter().find(|&&k| z[k] < lo[k] - tol || z[k] > hi[k] + tol) {
            fix[k] = if z[k] < lo[k] { Fix::Lower } else { Fix::Upper };
            continue;
        }
        // Primal feasibility of inactive rows.
        let worst = ineq
            .iter()
            .enumerate()
            .filter(|(j, _)| !active[*j])
            .map(|(j, r)| (j, (r.eval(&z) - r.rhs) / norm(&r.coeffs).max(1e-300)))
            .filter(|(_, v)| *v > tol)
            .max_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((j, _)) = worst {
            active[j] = true;
            continue;
        }
        // Bound multipliers: stationarity x − a + Gᵀλ + μ_u − μ_l = 0.
        let mut released = false;
        for k in 0..dim {
            if fix[k] == Fix::Free {
                continue;
            }
            let grad = z[k] - anchor[k] + (0..m).map(|i| lambda[i] * rows[i].0[k]).sum::<f64>();
            let ok = match fix[k] {
                Fix::Lower => grad >= -1e-12,
                Fix::Upper => grad <= 1e-12,
                Fix::Free => true,
            };
            if !ok {
                fix[k] = Fix::Free;
                released = true;
                break;
            }
        }
        if released {
            continue;
        }
        return Some(z);
    }
    None
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum Pin {
    Free,
    /// Held at a kink of the objective.
    Kink(f64),
    Lower,
    Upper,
}

/// Active-set finish for `Σ_t w_t ‖z − a_t‖₁` over a polyhedron (auxiliary
/// coordinates carry no cost). Each coordinate is pinned to a kink or a
/// bound, or left free with a constant slope; the active rows then fix the
/// free part. The point is returned only with multipliers certifying
/// optimality.
pub(crate) fn polish_absolute(cs: &ConstraintSet, terms: &[(f64, &[f64])], x: &[f64], guess: f64) -> Option<Vec<f64>> {
    let n = cs.n();
    let dim = cs.dim();
    let (lo, hi) = (cs.lower(), cs.upper());
    let ineq = cs.inequalities();
    let eq = cs.equalities();
    let tol = 1e-10;

    // Subgradient interval of coordinate j's cost at value v.
    let slopes = |j: usize, v: f64| -> (f64, f64) {
        if j >= n {
            return (0.0, 0.0);
        }
        let (mut s_lo, mut s_hi) = (0.0, 0.0);
        for (w, a) in terms {
            if v > a[j] {
                s_lo += w;
                s_hi += w;
            } else if v < a[j] {
                s_lo -= w;
                s_hi -= w;
            } else {
                s_lo -= w;
                s_hi += w;
            }
        }
        (s_lo, s_hi)
    };

    let mut pin: Vec<Pin> = (0..dim)
        .map(|j| {
            if x[j] <= lo[j] + guess {
                return Pin::Lower;
            }
            if x[j] >= hi[j] - guess {
                return Pin::Upper;
            }
            if j < n {
                let kink = terms.iter().map(|(_, a)| a[j]).min_by(|p, q| (p - x[j]).abs().total_cmp(&(q - x[j]).abs()));
                if let Some(k) = kink.filter(|k| (k - x[j]).abs() <= guess) {
                    return Pin::Kink(k);
                }
            }
            Pin::Free
        })
        .collect();
    let mut active: Vec<bool> = ineq.iter().map(|r| r.eval(x) >= r.rhs - guess * norm(&r.coeffs)).collect();

    for _ in 0..(4 * (dim + ineq.len()) + 10).min(400) {
        let rows: Vec<(&[f64], f64, Option<usize>)> = ineq
            .iter()
            .enumerate()
            .filter(|(j, _)| active[*j])
            .map(|(j, r)| (r.coeffs.as_slice(), r.rhs, Some(j)))
            .chain(eq.iter().map(|r| (r.coeffs.as_slice(), r.rhs, None)))
            .collect();
        let m = rows.len();
        let free: Vec<usize> = (0..dim).filter(|&j| pin[j] == Pin::Free).collect();
        let mut z: Vec<f64> = (0..dim)
            .map(|j| match pin[j] {
                Pin::Free => x[j],
                Pin::Kink(k) => k,
                Pin::Lower => lo[j],
                Pin::Upper => hi[j],
            })
            .collect();

        // Smallest change of the free coordinates that makes the active rows tight.
        if m > 0 {
            let r = DVector::from_fn(m, |i, _| rows[i].1 - dot(rows[i].0, &z));
            if free.is_empty() {
                if r.amax() > tol {
                    return None;
                }
            } else {
                let g = DMatrix::from_fn(m, free.len(), |i, c| rows[i].0[free[c]]);
                let d = g.clone().svd(true, true).solve(&r, 1e-12).ok()?;
                if (&g * &d - &r).amax() > tol {
                    // Inconsistent active set: drop the row farthest from tight.
                    let drop = (0..m).filter(|&i| rows[i].2.is_some()).max_by(|&a, &b| r[a].abs().total_cmp(&r[b].abs()));
                    match drop.and_then(|i| rows[i].2) {
                        Some(j) => {
                            active[j] = false;
                            continue;
                        }
                        None => return None,
                    }
                }
                for (c, &j) in free.iter().enumerate() {
                    z[j] += d[c];
                }
            }
        }

        // Primal feasibility.
        if let Some(j) = (0..dim).find(|&j| z[j] < lo[j] - tol || z[j] > hi[j] + tol) {
            pin[j] = if z[j] < lo[j] { Pin::Lower } else { Pin::Upper };
            continue;
        }
        if let Some(&j) = free.iter().find(|&&j| {
            let (s_lo, s_hi) = slopes(j, z[j]);
            s_lo != s_hi
        }) {
            pin[j] = Pin::Kink(z[j]);
            continue;
        }
        let worst = ineq
            .iter()
            .enumerate()
            .filter(|(j, _)| !active[*j])
            .map(|(j, r)| (j, (r.eval(&z) - r.rhs) / norm(&r.coeffs).max(1e-300)))
            .filter(|(_, v)| *v > tol)
            .max_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((j, _)) = worst {
            active[j] = true;
            continue;
        }

        // Multipliers from the free coordinates: (Gᵀλ)_j = −slope_j.
        let mut lambda = DVector::zeros(m);
        if m > 0 && !free.is_empty() {
            let gt = DMatrix::from_fn(free.len(), m, |c, i| rows[i].0[free[c]]);
            let target = DVector::from_fn(free.len(), |c, _| {
                let (s, _) = slopes(free[c], z[free[c]]);
                -s
            });
            lambda = gt.clone().svd(true, true).solve(&target, 1e-12).ok()?;
            if (&gt * &lambda - &target).amax() > 1e-9 {
                // Free coordinates with a nonzero slope and no row to balance it.
                return None;
            }
        } else if free.iter().any(|&j| {
            let (s_lo, s_hi) = slopes(j, z[j]);
            s_lo > 1e-9 || s_hi < -1e-9
        }) {
            return None;
        }
        if let Some(i) = (0..m).filter(|&i| rows[i].2.is_some() && lambda[i] < -1e-9).min_by(|&a, &b| lambda[a].total_cmp(&lambda[b])) {
            active[rows[i].2.unwrap()] = false;
            continue;
        }

        // Pinned coordinates need the balance inside their subgradient range.
        let mut released = false;
        for j in 0..dim {
            if pin[j] == Pin::Free || lo[j] == hi[j] {
                continue;
            }
            let push: f64 = (0..m).map(|i| lambda[i] * rows[i].0[j]).sum();
            let (s_lo, s_hi) = slopes(j, z[j]);
            let ok = match pin[j] {
                Pin::Kink(_) => -push >= s_lo - 1e-9 && -push <= s_hi + 1e-9,
                Pin::Lower => push + s_hi >= -1e-9,
                Pin::Upper => push + s_lo <= 1e-9,
                Pin::Free => true,
            };
            if !ok {
                pin[j] = Pin::Free;
                released = true;
                break;
            }
        }
        if released {
            continue;
        }
        return Some(z);
    }
    None
}
