//! Proximal operators against a golden-section search, and loss identities.

use confit::losses::{loss, prox_terms, LossSpec, Term};
use proptest::prelude::*;

mod common;
use common::g;

fn spec(k: u8, m: f64) -> LossSpec {
    match k % 3 {
        0 => LossSpec::Mse,
        1 => LossSpec::Mae,
        _ => LossSpec::Huber { threshold: m },
    }
}

// φ(a) − φ(b) for φ(x) = Σ w_j g(x − a_j) + (c/2)(x − v)². Pieces where a and
// b fall on the same branch are factored through a − b so the difference
// keeps its relative accuracy near the minimum.
fn diff(l: &LossSpec, c: f64, v: f64, terms: &[Term], a: f64, b: f64) -> f64 {
    let h = a - b;
    let mut d = 0.5 * c * h * (a + b - 2.0 * v);
    for t in terms {
        let (x, y) = (a - t.anchor, b - t.anchor);
        let same_side = x.signum() == y.signum();
        d += t.weight
            * match *l {
                LossSpec::Mse => h * (a + b - 2.0 * t.anchor),
                LossSpec::Huber { threshold: m } if x.abs() <= m && y.abs() <= m => h * (a + b - 2.0 * t.anchor),
                LossSpec::Huber { threshold: m } if x.abs() > m && y.abs() > m && same_side => 2.0 * m * x.signum() * h,
                LossSpec::Mae if same_side => x.signum() * h,
                _ => g(l, x) - g(l, y),
            };
    }
    d
}

fn golden(l: &LossSpec, c: f64, v: f64, terms: &[Term], mut lo: f64, mut hi: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    while hi - lo > 1e-12 {
        if diff(l, c, v, terms, x1, x2) <= 0.0 {
            hi = x2;
            x2 = x1;
            x1 = hi - r * (hi - lo);
        } else {
            lo = x1;
            x1 = x2;
            x2 = lo + r * (hi - lo);
        }
    }
    0.5 * (lo + hi)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn prox_scalar_matches_search(k in 0u8..3, m in 0.01f64..1.0, t in 0.01f64..10.0, v in -2.0f64..2.0, a in -2.0f64..2.0) {
        let l = spec(k, m);
        let got = l.prox_scalar(t, v, a);
        let term = [Term { weight: 1.0, anchor: a }];
        let want = golden(&l, 1.0 / t, v, &term, v.min(a) - 1.0, v.max(a) + 1.0);
        prop_assert!((got - want).abs() <= 1e-8, "{l:?} t={t} v={v} a={a}: {got} vs {want}");
    }

    #[test]
    fn prox_terms_matches_search(
        k in 0u8..3,
        m in 0.01f64..1.0,
        c in 0.01f64..10.0,
        v in -2.0f64..2.0,
        raw in prop::collection::vec((0.01f64..3.0, -2.0f64..2.0), 1..5),
    ) {
        let l = spec(k, m);
        let terms: Vec<Term> = raw.iter().map(|&(weight, anchor)| Term { weight, anchor }).collect();
        let got = prox_terms(&l, c, v, &terms);
        let lo = terms.iter().map(|t| t.anchor).fold(v, f64::min) - 1.0;
        let hi = terms.iter().map(|t| t.anchor).fold(v, f64::max) + 1.0;
        let want = golden(&l, c, v, &terms, lo, hi);
        prop_assert!((got - want).abs() <= 1e-8, "{l:?}: {got} vs {want}");
    }

    #[test]
    fn losses_are_symmetric(k in 0u8..3, m in 0.01f64..1.0, z in prop::collection::vec(-3.0f64..3.0, 1..20), shift in -1.0f64..1.0) {
        let l = spec(k, m);
        let y: Vec<f64> = z.iter().map(|v| v * 0.5 + shift).collect();
        prop_assert_eq!(loss(&l, &z, &y).unwrap(), loss(&l, &y, &z).unwrap());
        for (a, b) in z.iter().zip(&y) {
            prop_assert_eq!(l.penalty(a - b), l.penalty(b - a));
        }
    }

    #[test]
    fn mse_is_mean_squared_distance(z in prop::collection::vec(-3.0f64..3.0, 1..30), seed in 0.0f64..1.0) {
        let y: Vec<f64> = z.iter().enumerate().map(|(i, v)| (v + seed * i as f64).sin()).collect();
        let n = z.len() as f64;
        let sq: f64 = z.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
        let got = n * loss(&LossSpec::Mse, &z, &y).unwrap();
        prop_assert!((got - sq).abs() <= 1e-12 * sq.max(1.0));
    }

    #[test]
    fn penalties_match_independent_formula(k in 0u8..3, m in 0.01f64..1.0, x in -3.0f64..3.0) {
        let l = spec(k, m);
        prop_assert!((l.penalty(x) - g(&l, x)).abs() <= 1e-15 * g(&l, x).max(1.0));
    }

    #[test]
    fn huber_is_c1_at_threshold(m in 0.01f64..1.0, side in prop::bool::ANY) {
        let l = LossSpec::Huber { threshold: m };
        let x = if side { m } else { -m };
        let h = 1e-7;
        let left = (l.penalty(x) - l.penalty(x - h)) / h;
        let right = (l.penalty(x + h) - l.penalty(x)) / h;
        prop_assert!((left - right).abs() <= 1e-6, "{left} vs {right}");
        prop_assert!((l.penalty_derivative(x) - 2.0 * x).abs() <= 1e-12);
        prop_assert!((l.penalty(x) - m * m).abs() <= 1e-15);
    }
}
