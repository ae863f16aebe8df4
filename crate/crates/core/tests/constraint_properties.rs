//! DIDI encoding and constraint-set algebra.

use confit::constraints::{build_box, build_didi_constraints, didi_value, intersect, ConstraintSet, MEMBERSHIP_TOL};
use confit::data::ProtectedSpec;
use proptest::prelude::*;

mod common;
use common::brute_force_didi;

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>)> {
    (4usize..40, 1usize..3).prop_flat_map(|(n, f)| {
        (
            prop::collection::vec(0.0f64..1.0, n),
            prop::collection::vec(prop::collection::vec(0u8..3, n), f).prop_map(|cols| {
                cols.into_iter().map(|c| c.into_iter().map(|v| f64::from(v) / 2.0).collect()).collect()
            }),
        )
    })
}

fn specs(columns: &[Vec<f64>]) -> Vec<ProtectedSpec> {
    columns.iter().enumerate().map(|(j, c)| ProtectedSpec::from_column(j, &format!("p{j}"), c)).collect()
}

// A halfspace holding the constant vector 0.5 with the given slack, so every
// intersection below is nonempty.
fn halfspace(n: usize, coeffs: &[f64], slack: f64) -> ConstraintSet {
    let row: Vec<f64> = (0..n).map(|i| coeffs[i % coeffs.len()]).collect();
    let rhs = 0.5 * row.iter().sum::<f64>() + slack;
    ConstraintSet::polyhedron(n, vec![(row, rhs)], vec![]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn didi_matches_brute_force((z, cols) in instance()) {
        let got = didi_value(&z, &specs(&cols)).unwrap();
        let want = brute_force_didi(&z, &cols);
        prop_assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }

    #[test]
    fn encoding_admits_exactly_the_fair_vectors((z, cols) in instance(), frac in 0.0f64..2.0) {
        let p = specs(&cols);
        let d = didi_value(&z, &p).unwrap();
        let eps = frac * d;
        prop_assume!((d - eps).abs() > 1e-6);
        let cs = build_didi_constraints(&p, eps, z.len()).unwrap();
        prop_assert_eq!(cs.is_member(&z, MEMBERSHIP_TOL).unwrap(), d <= eps);
    }

    #[test]
    fn epsilon_at_didi_admits_the_vector((z, cols) in instance()) {
        let p = specs(&cols);
        let cs = build_didi_constraints(&p, didi_value(&z, &p).unwrap(), z.len()).unwrap();
        prop_assert!(cs.is_member(&z, MEMBERSHIP_TOL).unwrap());
    }

    #[test]
    fn intersection_is_commutative_and_associative(
        (z, cols) in instance(),
        eps in 0.0f64..0.5,
        w in prop::collection::vec(-1.0f64..1.0, 1..4),
        slack in 0.0f64..1.0,
        lo in -0.2f64..0.5,
    ) {
        let n = z.len();
        let a = build_didi_constraints(&specs(&cols), eps, n).unwrap();
        let b = build_box(lo, 1.0, n).unwrap();
        let c = halfspace(n, &w, slack);
        let ab = intersect(&a, &b).unwrap();
        let ba = intersect(&b, &a).unwrap();
        let ab_c = intersect(&ab, &c).unwrap();
        let a_bc = intersect(&a, &intersect(&b, &c).unwrap()).unwrap();
        let want = a.is_member(&z, MEMBERSHIP_TOL).unwrap()
            && b.is_member(&z, MEMBERSHIP_TOL).unwrap()
            && c.is_member(&z, MEMBERSHIP_TOL).unwrap();
        prop_assert_eq!(ab_c.is_member(&z, MEMBERSHIP_TOL).unwrap(), want);
        prop_assert_eq!(a_bc.is_member(&z, MEMBERSHIP_TOL).unwrap(), want);
        prop_assert_eq!(ab.is_member(&z, MEMBERSHIP_TOL).unwrap(), ba.is_member(&z, MEMBERSHIP_TOL).unwrap());
        prop_assert_eq!(ab.n_aux() + c.n_aux(), ab_c.n_aux());
    }

    #[test]
    fn box_membership(z in prop::collection::vec(-0.5f64..1.5, 1..20)) {
        let cs = build_box(0.0, 1.0, z.len()).unwrap();
        let inside = z.iter().all(|v| (0.0..=1.0).contains(v));
        prop_assert_eq!(cs.is_member(&z, 0.0).unwrap(), inside);
    }
}

#[test]
fn dimension_mismatch_is_an_error() {
    let a = build_box(0.0, 1.0, 3).unwrap();
    let b = build_box(0.0, 1.0, 4).unwrap();
    assert!(intersect(&a, &b).is_err());
    assert!(a.is_member(&[0.5; 4], 0.0).is_err());
}
