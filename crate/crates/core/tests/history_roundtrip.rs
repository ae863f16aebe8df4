//! Serialized histories parse back to the same values, bit for bit.

use confit::driver::{check_contraction_condition, Algorithm, Branch, IterationHistory, IterationRecord, SolveSummary};
use confit::experiment::{FoldOutcome, HistoryFile, HistoryHeader};
use confit::learners::LearnerSpec;
use confit::losses::LossSpec;
use proptest::prelude::*;

fn float() -> impl Strategy<Value = f64> {
    prop_oneof![any::<f64>().prop_filter("finite", |v| v.is_finite()), -1.0f64..1.0, Just(0.0), Just(-0.0)]
}

fn record(i: usize) -> impl Strategy<Value = IterationRecord> {
    (
        prop::collection::vec(float(), 3),
        prop::collection::vec(prop::option::of(float()), 6),
        any::<bool>(),
        prop::option::of(prop::collection::vec(float(), 3)),
        (0usize..1000, float(), float(), any::<bool>()),
    )
        .prop_map(move |(y_hat, o, member, z, (iters, p, d, conv))| IterationRecord {
            iteration: i,
            y_hat,
            r2_train: o[0],
            r2_test: o[1],
            c_train: o[2],
            c_test: o[3],
            residual: o[4],
            contraction_ratio: o[5],
            member,
            branch: z.as_ref().map(|_| if member { Branch::Feasible } else { Branch::Infeasible }),
            solver: z.as_ref().map(|_| SolveSummary {
                iterations: iters,
                primal_residual: p.abs(),
                dual_residual: d.abs(),
                converged: conv,
                polished: !conv,
                fallback: false,
            }),
            z,
        })
}

fn history_file() -> impl Strategy<Value = HistoryFile> {
    (0.05f64..0.95, float(), prop::collection::vec(prop::option::of((1usize..4, float())), 1..4)).prop_flat_map(|(alpha, eps, shape)| {
        let folds: Vec<BoxedStrategy<FoldOutcome>> = shape
            .into_iter()
            .map(|s| match s {
                None => Just(FoldOutcome::Failed("solver gave up".into())).boxed(),
                Some((len, didi)) => (1..=len)
                    .map(record)
                    .collect::<Vec<_>>()
                    .prop_map(move |records| FoldOutcome::Done {
                        n_train: 3,
                        n_test: 1,
                        history: IterationHistory {
                            algorithm: Algorithm::MovingTargets,
                            alpha,
                            alpha_m: Some(1.0 / alpha - 1.0),
                            beta: 0.1,
                            loss: LossSpec::Huber { threshold: 0.1 },
                            norm: "l2".into(),
                            epsilon: Some(eps),
                            y_train_didi: Some(didi),
                            records,
                            stopped_early: false,
                            verdict: check_contraction_condition(&LossSpec::Huber { threshold: 0.1 }, alpha),
                        },
                    })
                    .boxed(),
            })
            .collect();
        folds.prop_map(move |folds| HistoryFile {
            header: HistoryHeader {
                format: 1,
                dataset: "d.csv".into(),
                target: "y".into(),
                protected: vec!["g".into()],
                normalize: "train_fold".into(),
                folds: folds.len(),
                seed: 7,
                shuffle: "chacha8".into(),
                algorithm: Algorithm::MovingTargets,
                alpha,
                alpha_m: Some(1.0 / alpha - 1.0),
                beta: 0.1,
                iterations: 3,
                loss: LossSpec::Huber { threshold: 0.1 },
                norm: "l2".into(),
                learner: LearnerSpec::gbt(),
                constraint: "didi".into(),
                verdict: check_contraction_condition(&LossSpec::Huber { threshold: 0.1 }, alpha),
                std_kind: "population".into(),
            },
            folds,
        })
    })
}

fn bits(h: &HistoryFile) -> Vec<u64> {
    let mut out = Vec::new();
    for (_, hist) in h.histories() {
        for r in &hist.records {
            out.extend(r.y_hat.iter().map(|v| v.to_bits()));
            out.extend(r.z.iter().flatten().map(|v| v.to_bits()));
            out.extend([r.r2_train, r.r2_test, r.c_train, r.c_test, r.residual, r.contraction_ratio].iter().flatten().map(|v| v.to_bits()));
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn write_then_read_is_identity(h in history_file()) {
        let mut buf = Vec::new();
        h.write(&mut buf).unwrap();
        let back = HistoryFile::read(buf.as_slice()).unwrap();
        prop_assert_eq!(&back, &h);
        prop_assert_eq!(bits(&back), bits(&h));
        let mut again = Vec::new();
        back.write(&mut again).unwrap();
        prop_assert_eq!(again, buf);
    }
}
