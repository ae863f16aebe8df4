//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use confit::constraints::ConstraintSet;
use confit::losses::LossSpec;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Scalar penalty, written out separately from the library.
pub fn g(loss: &LossSpec, x: f64) -> f64 {
    match *loss {
        LossSpec::Mse => x * x,
        LossSpec::Mae => x.abs(),
        LossSpec::Huber { threshold: m } => {
            if x.abs() <= m {
                x * x
            } else {
                2.0 * m * x.abs() - m * m
            }
        }
    }
}

pub fn mean_loss(loss: &LossSpec, z: &[f64], y: &[f64]) -> f64 {
    z.iter().zip(y).map(|(a, b)| g(loss, a - b)).sum::<f64>() / z.len() as f64
}

/// Sum over features and groups of `|mean(z) − group mean(z)|`, grouping rows
/// by exact equality of the raw column values.
pub fn brute_force_didi(z: &[f64], columns: &[Vec<f64>]) -> f64 {
    let n = z.len();
    let mut overall = 0.0;
    for v in z {
        overall += v;
    }
    overall /= n as f64;
    let mut total = 0.0;
    for col in columns {
        let mut seen: Vec<f64> = Vec::new();
        for &v in col {
            if !seen.contains(&v) {
                seen.push(v);
            }
        }
        for v in seen {
            let mut s = 0.0;
            let mut c = 0usize;
            for i in 0..n {
                if col[i] == v {
                    s += z[i];
                    c += 1;
                }
            }
            total += (overall - s / c as f64).abs();
        }
    }
    total
}

pub struct Problem2d {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub halfspaces: Vec<([f64; 2], f64)>,
    pub anchor: Vec<f64>,
    pub trust: Option<(Vec<f64>, f64)>,
    pub constraints: ConstraintSet,
}

/// Box plus up to 4 halfspaces around an interior point; with `trust`, a
/// loss ball of random radius centered at that point.
pub fn random_2d_problem(rng: &mut ChaCha8Rng, trust: bool) -> Problem2d {
    let lo = [rng.gen_range(0.0..0.3), rng.gen_range(0.0..0.3)];
    let hi = [rng.gen_range(0.7..1.0), rng.gen_range(0.7..1.0)];
    let p = [rng.gen_range(lo[0] + 0.1..hi[0] - 0.1), rng.gen_range(lo[1] + 0.1..hi[1] - 0.1)];
    let count = rng.gen_range(0..=4);
    let halfspaces: Vec<([f64; 2], f64)> = (0..count)
        .map(|_| {
            let t: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let a = [t.cos(), t.sin()];
            (a, a[0] * p[0] + a[1] * p[1] + rng.gen_range(0.02..0.3))
        })
        .collect();
    let anchor = vec![rng.gen_range(-0.5..1.5), rng.gen_range(-0.5..1.5)];
    let beta = rng.gen_range(0.005..0.05);

    let mut rows: Vec<(Vec<f64>, f64)> = vec![
        (vec![1.0, 0.0], hi[0]),
        (vec![-1.0, 0.0], -lo[0]),
        (vec![0.0, 1.0], hi[1]),
        (vec![0.0, -1.0], -lo[1]),
    ];
    rows.extend(halfspaces.iter().map(|(a, b)| (a.to_vec(), *b)));
    let constraints = ConstraintSet::polyhedron(2, rows, vec![]).unwrap();
    Problem2d { lo, hi, halfspaces, anchor, trust: trust.then(|| (p.to_vec(), beta)), constraints }
}

pub struct GridOracle {
    /// Candidate points whose objective is within 1e-9 of the best candidate.
    pub near_optimal: Vec<[f64; 2]>,
    pub f_min: f64,
}

impl GridOracle {
    /// Max-norm distance from `z` to the nearest near-optimal candidate.
    pub fn distance(&self, z: &[f64]) -> f64 {
        self.near_optimal
            .iter()
            .map(|c| (c[0] - z[0]).abs().max((c[1] - z[1]).abs()))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Grid search at resolution `h`. Candidates are the lattice over the box,
/// 1-D lattices along every constraint line and around the trust-ball
/// boundary, and the pairwise intersections of those curves. A lattice alone
/// misplaces boundary minimizers by roughly (|∇f| h²)^(1/3); gridding each
/// face keeps the error at O(h).
pub fn grid_oracle(loss: &LossSpec, p: &Problem2d, h: f64) -> GridOracle {
    let mut cands: Vec<[f64; 2]> = Vec::new();
    let axis = |lo: f64, hi: f64| -> Vec<f64> {
        let steps = ((hi - lo) / h).floor() as usize;
        let mut v: Vec<f64> = (0..=steps).map(|i| lo + i as f64 * h).collect();
        v.push(hi);
        v
    };
    let (xs, ys) = (axis(p.lo[0], p.hi[0]), axis(p.lo[1], p.hi[1]));
    for &x in &xs {
        for &y in &ys {
            cands.push([x, y]);
        }
    }

    let mut lines: Vec<([f64; 2], f64)> = p.halfspaces.clone();
    lines.push(([1.0, 0.0], p.hi[0]));
    lines.push(([-1.0, 0.0], -p.lo[0]));
    lines.push(([0.0, 1.0], p.hi[1]));
    lines.push(([0.0, -1.0], -p.lo[1]));

    for &(a, b) in &lines {
        if let Some((z0, t, s0, s1)) = line_in_box(a, b, p) {
            let at = |s: f64| [z0[0] + s * t[0], z0[1] + s * t[1]];
            let steps = ((s1 - s0) / h).floor() as usize;
            for i in 0..=steps {
                cands.push(at(s0 + i as f64 * h));
            }
            cands.push(at(s1));
            if let Some((c, beta)) = &p.trust {
                for s in ball_crossings(loss, c, *beta, &at, s0, s1) {
                    cands.push(at(s));
                }
            }
        }
    }
    for i in 0..lines.len() {
        for j in i + 1..lines.len() {
            let ((a, b), (c, d)) = (lines[i], lines[j]);
            let det = a[0] * c[1] - a[1] * c[0];
            if det.abs() > 1e-12 {
                cands.push([(b * c[1] - a[1] * d) / det, (a[0] * d - b * c[0]) / det]);
            }
        }
    }
    if let Some((c, beta)) = &p.trust {
        let r_max = 2.0 * (2.0 * beta).sqrt().max(2.0 * beta) + 0.1;
        let count = ((std::f64::consts::TAU * r_max) / h).ceil() as usize;
        for k in 0..count {
            let th = std::f64::consts::TAU * k as f64 / count as f64;
            let u = [th.cos(), th.sin()];
            let r = ball_radius(loss, c, *beta, u);
            cands.push([c[0] + r * u[0], c[1] + r * u[1]]);
        }
    }

    let feasible = |z: &[f64; 2]| -> bool {
        let tol = 1e-12;
        if z[0] < p.lo[0] - tol || z[0] > p.hi[0] + tol || z[1] < p.lo[1] - tol || z[1] > p.hi[1] + tol {
            return false;
        }
        if p.halfspaces.iter().any(|(a, b)| a[0] * z[0] + a[1] * z[1] > b + tol) {
            return false;
        }
        match &p.trust {
            Some((c, beta)) => mean_loss(loss, z, c) <= beta + tol,
            None => true,
        }
    };
    let scored: Vec<([f64; 2], f64)> = cands.into_iter().filter(feasible).map(|z| (z, mean_loss(loss, &z, &p.anchor))).collect();
    let f_min = scored.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let near_optimal = scored.iter().filter(|s| s.1 <= f_min + 1e-9).map(|s| s.0).collect();
    GridOracle { near_optimal, f_min }
}

// The line `a·z = b` as `z0 + s t` with the parameter range inside the box.
fn line_in_box(a: [f64; 2], b: f64, p: &Problem2d) -> Option<([f64; 2], [f64; 2], f64, f64)> {
    let nn = a[0] * a[0] + a[1] * a[1];
    let z0 = [a[0] * b / nn, a[1] * b / nn];
    let t = [-a[1] / nn.sqrt(), a[0] / nn.sqrt()];
    let (mut s0, mut s1) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..2 {
        if t[k].abs() < 1e-15 {
            if z0[k] < p.lo[k] - 1e-12 || z0[k] > p.hi[k] + 1e-12 {
                return None;
            }
            continue;
        }
        let (u, v) = ((p.lo[k] - z0[k]) / t[k], (p.hi[k] - z0[k]) / t[k]);
        s0 = s0.max(u.min(v));
        s1 = s1.min(u.max(v));
    }
    (s0 <= s1).then_some((z0, t, s0, s1))
}

// Radius along direction `u` at which the ball constraint becomes active.
fn ball_radius(loss: &LossSpec, c: &[f64], beta: f64, u: [f64; 2]) -> f64 {
    let phi = |r: f64| mean_loss(loss, &[c[0] + r * u[0], c[1] + r * u[1]], c) - beta;
    let (mut lo, mut hi) = (0.0, 1.0);
    while phi(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

// Parameters where a line segment enters and leaves the trust ball.
fn ball_crossings(loss: &LossSpec, c: &[f64], beta: f64, at: &dyn Fn(f64) -> [f64; 2], s0: f64, s1: f64) -> Vec<f64> {
    let phi = |s: f64| mean_loss(loss, &at(s), c) - beta;
    // Ternary search for the minimum of the convex function phi.
    let (mut a, mut b) = (s0, s1);
    for _ in 0..300 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if phi(m1) <= phi(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    let sm = 0.5 * (a + b);
    if phi(sm) > 0.0 {
        return vec![];
    }
    let root = |mut inside: f64, mut outside: f64| -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (inside + outside);
            if phi(mid) <= 0.0 {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        inside
    };
    let mut out = Vec::new();
    if phi(s0) > 0.0 {
        out.push(root(sm, s0));
    }
    if phi(s1) > 0.0 {
        out.push(root(sm, s1));
    }
    out
}
