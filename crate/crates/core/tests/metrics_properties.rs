//! R², the DIDI ratio, fold aggregation and the significance rule.

use confit::data::ProtectedSpec;
use confit::metrics::{didi_ratio, mean_std, r_squared, significance_flag, summarize_folds, Direction, FoldCurve, Significance};
use proptest::prelude::*;

// Welford's single pass, population variance.
fn welford(v: &[f64]) -> (f64, f64) {
    let (mut mean, mut m2) = (0.0, 0.0);
    for (k, x) in v.iter().enumerate() {
        let d = x - mean;
        mean += d / (k + 1) as f64;
        m2 += d * (x - mean);
    }
    (mean, (m2 / v.len() as f64).sqrt())
}

fn pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..50).prop_flat_map(|n| (prop::collection::vec(0.0f64..1.0, n), prop::collection::vec(0.0f64..1.0, n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn r2_ignores_row_order((y, p) in pairs(), rot in 0usize..50) {
        let Ok(a) = r_squared(&y, &p) else { return Ok(()) };
        let k = rot % y.len();
        let (mut y2, mut p2) = (y.clone(), p.clone());
        y2.rotate_left(k);
        p2.rotate_left(k);
        y2.reverse();
        p2.reverse();
        prop_assert!((a - r_squared(&y2, &p2).unwrap()).abs() <= 1e-12);
        prop_assert!(a <= 1.0);
    }

    #[test]
    fn didi_ratio_is_homogeneous(z in prop::collection::vec(0.0f64..1.0, 4..30), c in 0.1f64..10.0, d in 0.01f64..1.0) {
        let col: Vec<f64> = (0..z.len()).map(|i| (i % 2) as f64).collect();
        let p = vec![ProtectedSpec::from_column(0, "g", &col)];
        let scaled: Vec<f64> = z.iter().map(|v| c * v).collect();
        let (a, b) = (didi_ratio(&z, &p, d).unwrap(), didi_ratio(&scaled, &p, d).unwrap());
        prop_assert!((b - c * a).abs() <= 1e-12 * b.abs().max(1.0));
        prop_assert!((didi_ratio(&z, &p, c * d).unwrap() - a / c).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn two_pass_matches_one_pass(v in prop::collection::vec(-10.0f64..10.0, 1..40)) {
        let (m, s) = mean_std(&v);
        let (wm, ws) = welford(&v);
        prop_assert!((m - wm).abs() <= 1e-12 * wm.abs().max(1.0));
        prop_assert!((s - ws).abs() <= 1e-12 * ws.max(1.0));
    }

    #[test]
    fn summary_aggregates_each_iteration(folds in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 5), 1..6)) {
        let curves: Vec<FoldCurve> = folds
            .iter()
            .map(|f| {
                let v: Vec<Option<f64>> = f.iter().copied().map(Some).collect();
                FoldCurve { r2_train: v.clone(), r2_test: v.clone(), c_train: v.clone(), c_test: vec![None; 5], residual: v }
            })
            .collect();
        let s = summarize_folds(&curves).unwrap();
        prop_assert_eq!(s.curve.len(), 5);
        for (i, it) in s.curve.iter().enumerate() {
            let column: Vec<f64> = folds.iter().map(|f| f[i]).collect();
            let (m, sd) = welford(&column);
            let got = it.r2_train.unwrap();
            prop_assert!((got.mean - m).abs() <= 1e-12 && (got.std - sd).abs() <= 1e-12);
            prop_assert!(it.c_test.is_none());
        }
        if folds.len() == 1 {
            prop_assert_eq!(s.r2_train.unwrap().std, 0.0);
        }
    }

    #[test]
    fn significance_rule(ma in -1.0f64..1.0, sa in 0.0f64..0.3, mm in -1.0f64..1.0, sm in 0.0f64..0.3) {
        let hi = significance_flag(ma, sa, mm, sm, Direction::HigherIsBetter);
        let lo = significance_flag(ma, sa, mm, sm, Direction::LowerIsBetter);
        let gap = (ma - mm).abs();
        if gap < sa + sm || gap == 0.0 {
            prop_assert_eq!((hi, lo), (Significance::Comparable, Significance::Comparable));
        } else {
            let a_higher = ma > mm;
            prop_assert_eq!(hi, if a_higher { Significance::ABetter } else { Significance::MBetter });
            prop_assert_eq!(lo, if a_higher { Significance::MBetter } else { Significance::ABetter });
        }
        // Swapping the two sides swaps the verdict.
        let swapped = significance_flag(mm, sm, ma, sa, Direction::HigherIsBetter);
        let expect = match hi {
            Significance::ABetter => Significance::MBetter,
            Significance::MBetter => Significance::ABetter,
            Significance::Comparable => Significance::Comparable,
        };
        prop_assert_eq!(swapped, expect);
    }
}

#[test]
fn significance_boundary_is_inclusive() {
    assert_eq!(significance_flag(0.5, 0.125, 0.25, 0.125, Direction::HigherIsBetter), Significance::ABetter);
    assert_eq!(significance_flag(0.5, 0.125, 0.25, 0.1251, Direction::HigherIsBetter), Significance::Comparable);
}
