//! Evaluation quantities: R², the DIDI ratio, and fold aggregation.

use serde::{Deserialize, Serialize};

use crate::constraints::didi_value;
use crate::data::ProtectedSpec;
use crate::error::{check_dim, Error, Result};

pub fn r_squared(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_dim(y_true.len(), y_pred.len())?;
    if y_true.len() < 2 {
        return Err(Error::InvalidParameter("R² needs at least 2 observations".into()));
    }
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::ConstantTarget);
    }
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// `DIDI(z) / DIDI(y_train)`.
pub fn didi_ratio(z: &[f64], protected: &[ProtectedSpec], y_train_didi: f64) -> Result<f64> {
    if !(y_train_didi > 0.0) {
        return Err(Error::VacuousConstraint);
    }
    Ok(didi_value(z, protected)? / y_train_didi)
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    if values.iter().all(|v| *v == values[0]) {
        return (values[0], 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        MeanStd { mean, std }
    }
}

/// Per-iteration metrics of one fold, as consumed by [`summarize_folds`].
/// `None` marks an undefined value (no test rows, no protected feature, or
/// no previous iterate).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FoldCurve {
    pub r2_train: Vec<Option<f64>>,
    pub r2_test: Vec<Option<f64>>,
    pub c_train: Vec<Option<f64>>,
    pub c_test: Vec<Option<f64>>,
    pub residual: Vec<Option<f64>>,
}

impl FoldCurve {
    fn columns(&self) -> [&Vec<Option<f64>>; 5] {
        [&self.r2_train, &self.r2_test, &self.c_train, &self.c_test, &self.residual]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub r2_train: Option<MeanStd>,
    pub r2_test: Option<MeanStd>,
    pub c_train: Option<MeanStd>,
    pub c_test: Option<MeanStd>,
    pub residual: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub folds: usize,
    pub final_r2_train: Vec<Option<f64>>,
    pub final_r2_test: Vec<Option<f64>>,
    pub final_c_train: Vec<Option<f64>>,
    pub final_c_test: Vec<Option<f64>>,
    pub r2_train: Option<MeanStd>,
    pub r2_test: Option<MeanStd>,
    pub c_train: Option<MeanStd>,
    pub c_test: Option<MeanStd>,
    pub curve: Vec<IterationStats>,
    pub std_kind: String,
}

// Defined only when every fold has a value.
fn stats(values: &[Option<f64>]) -> Option<MeanStd> {
    let v: Option<Vec<f64>> = values.iter().copied().collect();
    v.map(|v| MeanStd::of(&v))
}

pub fn summarize_folds(curves: &[FoldCurve]) -> Result<FoldSummary> {
    let first = curves.first().ok_or_else(|| Error::InvalidParameter("no folds to summarize".into()))?;
    let len = first.r2_train.len();
    if len == 0 {
        return Err(Error::InvalidParameter("empty fold history".into()));
    }
    for c in curves {
        for v in c.columns() {
            if v.len() != len {
                return Err(Error::Mismatch(format!("fold histories differ in length ({} vs {len})", v.len())));
            }
        }
    }
    let column = |pick: fn(&FoldCurve) -> &Vec<Option<f64>>, i: usize| -> Vec<Option<f64>> { curves.iter().map(|c| pick(c)[i]).collect() };
    let curve: Vec<IterationStats> = (0..len)
        .map(|i| IterationStats {
            iteration: i + 1,
            r2_train: stats(&column(|c| &c.r2_train, i)),
            r2_test: stats(&column(|c| &c.r2_test, i)),
            c_train: stats(&column(|c| &c.c_train, i)),
            c_test: stats(&column(|c| &c.c_test, i)),
            residual: stats(&column(|c| &c.residual, i)),
        })
        .collect();
    let last = len - 1;
    let last_stats = curve[last].clone();
    Ok(FoldSummary {
        folds: curves.len(),
        final_r2_train: column(|c| &c.r2_train, last),
        final_r2_test: column(|c| &c.r2_test, last),
        final_c_train: column(|c| &c.c_train, last),
        final_c_test: column(|c| &c.c_test, last),
        r2_train: last_stats.r2_train,
        r2_test: last_stats.r2_test,
        c_train: last_stats.c_train,
        c_test: last_stats.c_test,
        curve,
        std_kind: "population".into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherIsBetter,
    LowerIsBetter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Significance {
    #[serde(rename = "A-better")]
    ABetter,
    #[serde(rename = "M-better")]
    MBetter,
    #[serde(rename = "comparable")]
    Comparable,
}

impl Significance {
    pub fn label(self) -> &'static str {
        match self {
            Significance::ABetter => "A-better",
            Significance::MBetter => "M-better",
            Significance::Comparable => "comparable",
        }
    }
}

/// A difference is significant when `|μ_a − μ_m| ≥ σ_a + σ_m`.
pub fn significance_flag(mean_a: f64, std_a: f64, mean_m: f64, std_m: f64, direction: Direction) -> Significance {
    let gap = mean_a - mean_m;
    if gap == 0.0 || gap.abs() < std_a + std_m {
        return Significance::Comparable;
    }
    match (gap > 0.0, direction) {
        (true, Direction::HigherIsBetter) | (false, Direction::LowerIsBetter) => Significance::ABetter,
        _ => Significance::MBetter,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r2_examples() {
        assert_eq!(r_squared(&[0.1, 0.5, 0.9], &[0.1, 0.5, 0.9]).unwrap(), 1.0);
        assert!(r_squared(&[0.1, 0.5, 0.9], &[0.5; 3]).unwrap().abs() < 1e-15);
        assert_eq!(r_squared(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), -3.0);
        assert!(matches!(r_squared(&[0.3, 0.3], &[0.0, 1.0]), Err(Error::ConstantTarget)));
    }

    #[test]
    fn two_point_population_std() {
        let (m, s) = mean_std(&[0.4, 0.6]);
        assert!((m - 0.5).abs() < 1e-15 && (s - 0.1).abs() < 1e-15);
    }

    #[test]
    fn didi_ratio_zero_training_didi() {
        assert!(matches!(didi_ratio(&[0.1], &[], 0.0), Err(Error::VacuousConstraint)));
    }

    #[test]
    fn significance_examples() {
        use Direction::*;
        assert_eq!(significance_flag(0.467, 0.019, 0.342, 0.085, HigherIsBetter), Significance::ABetter);
        assert_eq!(significance_flag(0.5, 0.0, 0.5, 0.0, HigherIsBetter), Significance::Comparable);
        assert_eq!(significance_flag(0.75, 0.125, 0.5, 0.125, HigherIsBetter), Significance::ABetter);
        assert_eq!(significance_flag(0.75, 0.125, 0.5, 0.125, LowerIsBetter), Significance::MBetter);
    }

    #[test]
    fn summarize_rejects_ragged() {
        let one = vec![Some(1.0)];
        let a = FoldCurve { r2_train: one.clone(), r2_test: one.clone(), c_train: one.clone(), c_test: one, residual: vec![None] };
        let mut b = a.clone();
        b.c_test.push(Some(2.0));
        assert!(summarize_folds(&[a, b]).is_err());
    }

    #[test]
    fn identical_folds_have_zero_std() {
        let c = FoldCurve {
            r2_train: vec![Some(0.25), Some(0.5)],
            r2_test: vec![None, None],
            c_train: vec![Some(1.0), Some(0.5)],
            c_test: vec![Some(1.0), Some(0.5)],
            residual: vec![None, Some(0.1)],
        };
        let s = summarize_folds(&[c.clone(), c.clone(), c]).unwrap();
        assert_eq!(s.r2_train, Some(MeanStd { mean: 0.5, std: 0.0 }));
        assert_eq!(s.r2_test, None);
        assert_eq!(s.curve[0].residual, None);
        assert_eq!(s.curve[1].residual.unwrap().std, 0.0);
    }
}
