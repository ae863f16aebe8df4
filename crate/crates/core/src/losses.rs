//! Separable regression losses and their proximal operators.
//!
//! Every loss here has the form `L(z, y) = (1/n) Σ g(z_k − y_k)` for a scalar
//! penalty `g`:
//!
//! | loss  | `g(x)`                                           |
//! |-------|--------------------------------------------------|
//! | MSE   | `x²`                                             |
//! | MAE   | `|x|`                                            |
//! | Huber | `x²` for `|x| ≤ M`, `2M|x| − M²` otherwise       |
//!
//! The proximal operators act on the *unnormalized* penalty `g`; callers that
//! work with the `1/n`-normalized loss pass `t / n` as the step.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Default Huber threshold in normalized output units.
pub const DEFAULT_HUBER_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    Mse,
    Mae,
    Huber { threshold: f64 },
}

/// Norm in which a loss's projections are analysed: L2 for MSE and Huber,
/// L1 for MAE.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchedNorm {
    L1,
    L2,
}

impl MatchedNorm {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            MatchedNorm::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            MatchedNorm::L2 => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
        }
    }
}

impl LossSpec {
    pub fn huber(threshold: f64) -> Result<Self> {
        let spec = LossSpec::Huber { threshold };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::Huber { threshold } if !(threshold > 0.0 && threshold.is_finite()) => Err(
                Error::InvalidParameter(format!("huber threshold must be > 0, got {threshold}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::Mse => "mse",
            LossSpec::Mae => "mae",
            LossSpec::Huber { .. } => "huber",
        }
    }

    pub fn matched_norm(&self) -> MatchedNorm {
        match self {
            LossSpec::Mae => MatchedNorm::L1,
            LossSpec::Mse | LossSpec::Huber { .. } => MatchedNorm::L2,
        }
    }

    /// Scalar penalty `g(x)`.
    #[inline]
    pub fn penalty(&self, x: f64) -> f64 {
        match *self {
            LossSpec::Mse => x * x,
            LossSpec::Mae => x.abs(),
            LossSpec::Huber { threshold: m } => {
                let a = x.abs();
                if a <= m {
                    x * x
                } else {
                    2.0 * m * a - m * m
                }
            }
        }
    }

    /// Derivative of `g`; at the MAE kink this returns 0 (the midpoint of the
    /// subdifferential).
    #[inline]
    pub fn penalty_derivative(&self, x: f64) -> f64 {
        match *self {
            LossSpec::Mse => 2.0 * x,
            LossSpec::Mae => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            LossSpec::Huber { threshold: m } => {
                if x.abs() <= m {
                    2.0 * x
                } else {
                    2.0 * m * x.signum()
                }
            }
        }
    }

    /// Sum of penalties `Σ g(z_k − y_k)` without the `1/n` factor.
    pub fn total_penalty(&self, z: &[f64], y: &[f64]) -> f64 {
        z.iter().zip(y).map(|(a, b)| self.penalty(a - b)).sum()
    }

    /// `argmin_z g(z − anchor) + (1/(2t))(z − v)²` for a single coordinate.
    #[inline]
    pub fn prox_scalar(&self, t: f64, v: f64, anchor: f64) -> f64 {
        let w = v - anchor;
        match *self {
            LossSpec::Mse => anchor + w / (1.0 + 2.0 * t),
            LossSpec::Mae => anchor + soft_threshold(w, t),
            LossSpec::Huber { threshold: m } => {
                if w.abs() <= m * (1.0 + 2.0 * t) {
                    anchor + w / (1.0 + 2.0 * t)
                } else {
                    anchor + w - 2.0 * t * m * w.signum()
                }
            }
        }
    }
}

#[inline]
pub fn soft_threshold(x: f64, level: f64) -> f64 {
    if x > level {
        x - level
    } else if x < -level {
        x + level
    } else {
        0.0
    }
}

/// Mean loss `(1/n) Σ g(z_k − y_k)`.
pub fn loss(spec: &LossSpec, z: &[f64], y: &[f64]) -> Result<f64> {
    check_dim(z.len(), y.len())?;
    if z.is_empty() {
        return Err(Error::InvalidParameter("loss of empty vectors".into()));
    }
    Ok(spec.total_penalty(z, y) / z.len() as f64)
}

/// Pointwise proximal operator of the unnormalized penalty.
///
/// Returns `argmin_z Σ_k [ g(z_k − anchor_k) + (1/(2t))(z_k − v_k)² ]`. For the
/// normalized loss `(1/n) Σ g` pass `t / n`.
pub fn prox(spec: &LossSpec, t: f64, v: &[f64], anchor: &[f64]) -> Result<Vec<f64>> {
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("prox step must be > 0, got {t}")));
    }
    check_dim(v.len(), anchor.len())?;
    Ok(v
        .iter()
        .zip(anchor)
        .map(|(&vk, &ak)| spec.prox_scalar(t, vk, ak))
        .collect())
}

/// A weighted sum of penalties centred at different anchors, evaluated
/// coordinate-wise: `Σ_j w_j g(x − a_j)`.
///
/// This is the objective shape of the Moving Targets master step,
/// `L(z, y) + (1/α_m) L(z, ŷ)`.
#[derive(Debug, Clone, Copy)]
pub struct Term {
    pub weight: f64,
    pub anchor: f64,
}

/// `argmin_x Σ_j w_j g(x − a_j) + (c/2)(x − v)²` with `c ≥ 0`.
///
/// With `c = 0` this is the plain minimizer of the weighted penalty; when that
/// minimizer is not unique the midpoint of the flat segment is returned.
pub fn prox_terms(spec: &LossSpec, c: f64, v: f64, terms: &[Term]) -> f64 {
    if let [only] = terms {
        if c > 0.0 && only.weight > 0.0 {
            return spec.prox_scalar(only.weight / c, v, only.anchor);
        }
    }
    if let LossSpec::Mse = spec {
        let num: f64 = c * v + terms.iter().map(|t| 2.0 * t.weight * t.anchor).sum::<f64>();
        let den: f64 = c + terms.iter().map(|t| 2.0 * t.weight).sum::<f64>();
        return if den > 0.0 { num / den } else { v };
    }
    piecewise_root(spec, c, v, terms)
}

// Derivative of the composite objective restricted to an open interval free of
// breakpoints is affine; `affine_at` classifies every piece at `s` and returns
// (slope, intercept).
fn affine_at(spec: &LossSpec, c: f64, v: f64, terms: &[Term], s: f64) -> (f64, f64) {
    let mut slope = c;
    let mut intercept = -c * v;
    for t in terms {
        let d = s - t.anchor;
        match *spec {
            LossSpec::Mse => {
                slope += 2.0 * t.weight;
                intercept -= 2.0 * t.weight * t.anchor;
            }
            LossSpec::Mae => intercept += t.weight * d.signum(),
            LossSpec::Huber { threshold: m } => {
                if d.abs() <= m {
                    slope += 2.0 * t.weight;
                    intercept -= 2.0 * t.weight * t.anchor;
                } else {
                    intercept += 2.0 * t.weight * m * d.signum();
                }
            }
        }
    }
    (slope, intercept)
}

fn piecewise_root(spec: &LossSpec, c: f64, v: f64, terms: &[Term]) -> f64 {
    let mut bps: Vec<f64> = Vec::with_capacity(2 * terms.len());
    for t in terms.iter().filter(|t| t.weight > 0.0) {
        match *spec {
            LossSpec::Mse => {}
            LossSpec::Mae => bps.push(t.anchor),
            LossSpec::Huber { threshold: m } => {
                bps.push(t.anchor - m);
                bps.push(t.anchor + m);
            }
        }
    }
    let active: Vec<Term> = terms.iter().copied().filter(|t| t.weight > 0.0).collect();
    if active.is_empty() {
        return v;
    }
    bps.sort_by(|a, b| a.total_cmp(b));
    bps.dedup();

    // Segment i spans (edge[i], edge[i + 1]).
    let mut edges = Vec::with_capacity(bps.len() + 2);
    edges.push(f64::NEG_INFINITY);
    edges.extend_from_slice(&bps);
    edges.push(f64::INFINITY);

    let sample = |lo: f64, hi: f64| -> Option<f64> {
        let s = match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (false, true) => hi - 1.0,
            (true, false) => lo + 1.0,
            (false, false) => 0.0,
        };
        (s > lo && s < hi).then_some(s)
    };
    let segs: Vec<Option<(f64, f64)>> = edges
        .windows(2)
        .map(|w| sample(w[0], w[1]).map(|s| affine_at(spec, c, v, &active, s)))
        .collect();

    for (i, seg) in segs.iter().enumerate() {
        let (lo, hi) = (edges[i], edges[i + 1]);
        if let Some((a, b)) = *seg {
            if a > 0.0 {
                let x = -b / a;
                if x > lo && x < hi {
                    return x;
                }
            } else if b == 0.0 {
                return match (lo.is_finite(), hi.is_finite()) {
                    (true, true) => 0.5 * (lo + hi),
                    (true, false) => lo,
                    (false, true) => hi,
                    (false, false) => v,
                };
            }
        }
        if i + 1 < segs.len() {
            let bp = edges[i + 1];
            let left = seg.map(|(a, b)| a * bp + b);
            let right = segs[i + 1].map(|(a, b)| a * bp + b);
            // A flat zero segment to the right owns the root (midpoint rule).
            let flat_next = matches!(segs[i + 1], Some((a, b)) if a <= 0.0 && b == 0.0);
            if let (Some(l), Some(r)) = (left, right) {
                if l <= 0.0 && r >= 0.0 && !flat_next {
                    return bp;
                }
            }
        }
    }
    bisect_derivative(spec, c, v, &active, &bps)
}

// Fallback for roots that the segment scan misses through rounding at a
// breakpoint. The right-derivative is monotone, so bisection converges.
fn bisect_derivative(spec: &LossSpec, c: f64, v: f64, terms: &[Term], bps: &[f64]) -> f64 {
    let deriv = |x: f64| -> f64 {
        c * (x - v)
            + terms
                .iter()
                .map(|t| t.weight * spec.penalty_derivative(x - t.anchor))
                .sum::<f64>()
    };
    let lo0 = bps.first().copied().unwrap_or(v).min(v);
    let hi0 = bps.last().copied().unwrap_or(v).max(v);
    let (mut lo, mut hi) = (lo0 - 1.0, hi0 + 1.0);
    while deriv(lo) > 0.0 {
        lo -= 2.0 * (hi - lo);
    }
    while deriv(hi) < 0.0 {
        hi += 2.0 * (hi - lo);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if deriv(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
