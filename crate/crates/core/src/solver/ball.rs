//! Euclidean projection onto a loss ball `{z : Σ g(z_k − c_k) ≤ R}`.

use crate::losses::{soft_threshold, LossSpec};

pub(crate) fn project_onto_loss_ball(loss: &LossSpec, center: &[f64], radius: f64, v: &[f64], out: &mut [f64]) {
    let w: Vec<f64> = v.iter().zip(center).map(|(a, c)| a - c).collect();
    if w.iter().map(|&x| loss.penalty(x)).sum::<f64>() <= radius {
        out.copy_from_slice(v);
        return;
    }
    if radius <= 0.0 {
        out.copy_from_slice(center);
        return;
    }
    match *loss {
        LossSpec::Mse => {
            let norm2: f64 = w.iter().map(|x| x * x).sum();
            let s = (radius / norm2).sqrt();
            for ((o, c), x) in out.iter_mut().zip(center).zip(&w) {
                *o = c + s * x;
            }
        }
        LossSpec::Mae => {
            let theta = l1_threshold(&w, radius);
            for ((o, c), x) in out.iter_mut().zip(center).zip(&w) {
                *o = c + soft_threshold(*x, theta);
            }
        }
        LossSpec::Huber { .. } => {
            // Σ g(prox_{μg}(w)) is continuous and decreasing in μ.
            let value = |mu: f64| -> f64 { w.iter().map(|&x| loss.penalty(loss.prox_scalar(mu, x, 0.0))).sum() };
            let mut hi = 1.0;
            while value(hi) > radius {
                hi *= 2.0;
            }
            let mut lo = 0.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if value(mid) > radius {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            for ((o, c), x) in out.iter_mut().zip(center).zip(&w) {
                *o = c + loss.prox_scalar(hi, *x, 0.0);
            }
        }
    }
}

// Threshold θ with Σ max(|w_k| − θ, 0) = radius, assuming ‖w‖₁ > radius.
fn l1_threshold(w: &[f64], radius: f64) -> f64 {
    let mut a: Vec<f64> = w.iter().map(|x| x.abs()).collect();
    a.sort_by(|x, y| y.total_cmp(x));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &ai) in a.iter().enumerate() {
        cum += ai;
        let t = (cum - radius) / (i + 1) as f64;
        if ai > t {
            theta = t;
        } else {
            break;
        }
    }
    theta.max(0.0)
}
