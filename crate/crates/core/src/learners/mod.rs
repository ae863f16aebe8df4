//! Unconstrained training step: fit a model to a target vector.
//!
//! Fitting is the projection onto the model range `B`: for ridge with
//! `λ = 0` and squared loss it is exactly the orthogonal projection onto the
//! column space of `[1 X]`.

mod gbt;
mod ridge;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::losses::{loss, LossSpec};

pub use gbt::{Ensemble, Node};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Ridge,
    GradientBoostedTrees,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    pub ridge_lambda: f64,
    pub trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    /// Fraction of rows drawn (without replacement) for each tree.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for LearnerSpec {
    fn default() -> Self {
        LearnerSpec {
            kind: LearnerKind::GradientBoostedTrees,
            ridge_lambda: 0.0,
            trees: 50,
            max_depth: 3,
            learning_rate: 0.1,
            min_samples_leaf: 5,
            subsample: 1.0,
            seed: 0,
        }
    }
}

impl LearnerSpec {
    pub fn ridge(lambda: f64) -> Self {
        LearnerSpec { kind: LearnerKind::Ridge, ridge_lambda: lambda, ..LearnerSpec::default() }
    }

    pub fn gbt() -> Self {
        LearnerSpec::default()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return bad("ridge_lambda must be finite and >= 0");
        }
        if self.kind == LearnerKind::GradientBoostedTrees {
            if self.trees == 0 {
                return bad("trees must be >= 1");
            }
            if self.max_depth == 0 {
                return bad("max_depth must be >= 1");
            }
            if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
                return bad("learning_rate must lie in (0, 1]");
            }
            if self.min_samples_leaf == 0 {
                return bad("min_samples_leaf must be >= 1");
            }
            if !(self.subsample > 0.0 && self.subsample <= 1.0) {
                return bad("subsample must lie in (0, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    Ridge { intercept: f64, weights: Vec<f64> },
    Trees(Ensemble),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub spec: LearnerSpec,
    pub params: ModelParams,
    /// Loss of the training predictions against the fit target.
    pub training_loss: f64,
    /// Predictions on the training matrix, as computed by [`predict`].
    #[serde(skip)]
    pub training_predictions: Vec<f64>,
}

impl FittedModel {
    pub fn n_features(&self) -> usize {
        match &self.params {
            ModelParams::Ridge { weights, .. } => weights.len(),
            ModelParams::Trees(e) => e.n_features,
        }
    }
}

/// Fit a learner to `target`. Ridge always solves least squares; boosting
/// follows the gradient of `loss`.
pub fn fit(spec: &LearnerSpec, x: &DMatrix<f64>, target: &[f64], loss_spec: &LossSpec) -> Result<FittedModel> {
    spec.validate()?;
    loss_spec.validate()?;
    check_dim(x.nrows(), target.len())?;
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::EmptyTable);
    }
    if x.iter().chain(target).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("features and target must be finite".into()));
    }
    let params = match spec.kind {
        LearnerKind::Ridge => {
            let (intercept, weights) = ridge::fit(x, target, spec.ridge_lambda)?;
            ModelParams::Ridge { intercept, weights }
        }
        LearnerKind::GradientBoostedTrees => ModelParams::Trees(gbt::fit(spec, x, target, loss_spec)),
    };
    let mut model = FittedModel { spec: spec.clone(), params, training_loss: 0.0, training_predictions: Vec::new() };
    let pred = predict(&model, x)?;
    model.training_loss = loss(loss_spec, &pred, target)?;
    model.training_predictions = pred;
    Ok(model)
}

/// Fitting viewed as the projection onto the model range.
pub fn range_projection_fit(spec: &LearnerSpec, x: &DMatrix<f64>, target: &[f64], loss_spec: &LossSpec) -> Result<FittedModel> {
    fit(spec, x, target, loss_spec)
}

pub fn predict(model: &FittedModel, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_dim(model.n_features(), x.ncols())?;
    Ok(match &model.params {
        ModelParams::Ridge { intercept, weights } => (0..x.nrows())
            .map(|i| intercept + weights.iter().enumerate().map(|(j, w)| w * x[(i, j)]).sum::<f64>())
            .collect(),
        ModelParams::Trees(e) => e.predict(x),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design() -> DMatrix<f64> {
        DMatrix::from_row_slice(6, 2, &[0.0, 0.1, 0.2, 0.9, 0.4, 0.3, 0.6, 0.8, 0.8, 0.2, 1.0, 0.5])
    }

    #[test]
    fn ridge_recovers_linear_data() {
        let x = design();
        let y: Vec<f64> = (0..6).map(|i| 0.3 + 0.5 * x[(i, 0)] - 0.2 * x[(i, 1)]).collect();
        let m = fit(&LearnerSpec::ridge(0.0), &x, &y, &LossSpec::Mse).unwrap();
        let ModelParams::Ridge { intercept, weights } = &m.params else { panic!() };
        assert!((intercept - 0.3).abs() < 1e-12);
        assert!((weights[0] - 0.5).abs() < 1e-12 && (weights[1] + 0.2).abs() < 1e-12);
        assert!(m.training_loss <= 1e-12);
    }

    #[test]
    fn huge_lambda_predicts_mean() {
        let x = design();
        let y = [0.1, 0.5, 0.2, 0.9, 0.4, 0.3];
        let m = fit(&LearnerSpec::ridge(1e14), &x, &y, &LossSpec::Mse).unwrap();
        let mean = y.iter().sum::<f64>() / 6.0;
        for p in predict(&m, &x).unwrap() {
            assert!((p - mean).abs() < 1e-9);
        }
    }

    #[test]
    fn singular_without_penalty_is_error() {
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.5, 1.0, 1.0, 2.0]);
        let r = fit(&LearnerSpec::ridge(0.0), &x, &[0.0, 0.5, 1.0], &LossSpec::Mse);
        assert!(matches!(r, Err(Error::Singular)));
        assert!(fit(&LearnerSpec::ridge(1e-3), &x, &[0.0, 0.5, 1.0], &LossSpec::Mse).is_ok());
    }

    #[test]
    fn predict_checks_width() {
        let x = design();
        let m = fit(&LearnerSpec::ridge(0.0), &x, &[0.1, 0.5, 0.2, 0.9, 0.4, 0.3], &LossSpec::Mse).unwrap();
        assert!(matches!(predict(&m, &DMatrix::zeros(2, 3)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn training_predictions_match_predict_bitwise() {
        let x = design();
        let y = [0.1, 0.5, 0.2, 0.9, 0.4, 0.3];
        let spec = LearnerSpec { min_samples_leaf: 1, ..LearnerSpec::gbt() };
        for l in [LossSpec::Mse, LossSpec::Mae, LossSpec::huber(0.1).unwrap()] {
            let m = fit(&spec, &x, &y, &l).unwrap();
            assert_eq!(m.training_predictions, predict(&m, &x).unwrap());
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = [
            LearnerSpec { trees: 0, ..LearnerSpec::gbt() },
            LearnerSpec { max_depth: 0, ..LearnerSpec::gbt() },
            LearnerSpec { learning_rate: 0.0, ..LearnerSpec::gbt() },
            LearnerSpec::ridge(-1.0),
        ];
        for s in bad {
            assert!(s.validate().is_err(), "{s:?}");
        }
    }
}
