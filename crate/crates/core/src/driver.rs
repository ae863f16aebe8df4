//! The training loop with target adjustment.
//!
//! ```text
//! ŷ¹ = fit(y)
//! for i = 1 .. N−1
//!     if ŷⁱ ∉ C   zⁱ = argmin { L(z, (1−α)y + αŷⁱ) | z ∈ C }
//!     else        zⁱ = argmin { L(z, y) | L(z, ŷⁱ) ≤ β, z ∈ C }
//!     ŷⁱ⁺¹ = fit(zⁱ)
//! ```
//!
//! Moving Targets replaces the infeasible step by
//! `argmin { L(z, y) + (1/α_m) L(z, ŷⁱ) | z ∈ C }`.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::constraints::{build_box, build_didi_constraints, didi_value, intersect, ConstraintSet, MEMBERSHIP_TOL};
use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::learners::{predict, range_projection_fit, LearnerSpec};
use crate::losses::{LossSpec, MatchedNorm};
use crate::metrics::{r_squared, FoldCurve};
use crate::solver::{minimize_terms, project_ball_intersection_warm, SolverOptions, SolverReport, WarmStart};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    AffineExtension,
    MovingTargets,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::AffineExtension => "affine_extension",
            Algorithm::MovingTargets => "moving_targets",
        }
    }
}

#[derive(Debug, Clone)]
pub enum ConstraintSource {
    /// `ε = fraction · DIDI(y_train)` over the training fold's protected features.
    Didi { fraction: f64 },
    DidiEpsilon { epsilon: f64 },
    Fixed(ConstraintSet),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Weight on the prediction in the affine extension. Moving Targets runs
    /// use `α_m = 1/α − 1`.
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub loss: LossSpec,
    pub learner: LearnerSpec,
    pub algorithm: Algorithm,
    pub constraints: ConstraintSource,
    /// Optional output box intersected with the constraint source.
    pub bounds: Option<(f64, f64)>,
    pub membership_tol: f64,
    pub seed: u64,
    pub solver: SolverOptions,
    /// Stop once the fixed-point residual drops below this value.
    pub early_stop: Option<f64>,
    /// Abort on adjustment solver non-convergence instead of flagging it.
    pub fail_hard: bool,
}

/// Residual threshold used when early stopping is switched on without a value.
pub const DEFAULT_EARLY_STOP: f64 = 1e-8;

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            alpha: 0.5,
            beta: 0.1,
            iterations: 30,
            loss: LossSpec::Mse,
            learner: LearnerSpec::default(),
            algorithm: Algorithm::AffineExtension,
            constraints: ConstraintSource::Didi { fraction: 0.2 },
            bounds: None,
            membership_tol: MEMBERSHIP_TOL,
            seed: 0,
            solver: SolverOptions::default(),
            early_stop: None,
            fail_hard: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(0.0..1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1), got {}", self.alpha));
        }
        if !(self.beta >= 0.0) {
            return bad(format!("beta must be >= 0, got {}", self.beta));
        }
        if self.iterations == 0 {
            return bad("iterations must be >= 1".into());
        }
        if !(self.membership_tol >= 0.0) {
            return bad("membership tolerance must be >= 0".into());
        }
        if let Some(t) = self.early_stop {
            if !(t > 0.0) {
                return bad("early-stop tolerance must be > 0".into());
            }
        }
        if self.algorithm == Algorithm::MovingTargets && self.alpha == 0.0 {
            return bad("moving targets needs alpha > 0 (alpha_m = 1/alpha - 1)".into());
        }
        match &self.constraints {
            ConstraintSource::Didi { fraction } if !(*fraction > 0.0 && *fraction <= 1.0) => {
                return bad(format!("didi fraction must lie in (0, 1], got {fraction}"));
            }
            ConstraintSource::DidiEpsilon { epsilon } if !(*epsilon >= 0.0) => {
                return bad(format!("epsilon must be >= 0, got {epsilon}"));
            }
            _ => {}
        }
        self.loss.validate()?;
        self.learner.validate()
    }
}

/// `α_m = 1/α_a − 1`.
///
/// The input is read as the decimal it prints as (`0.9` is 9/10) and the
/// conversion is done on that fraction, so `0.9` maps to the double nearest
/// 1/9. Inputs without a short decimal form use `(1 − α)/α`.
pub fn alpha_convert(alpha_a: f64) -> Result<f64> {
    if !(alpha_a > 0.0 && alpha_a <= 1.0) {
        return Err(Error::InvalidParameter(format!("alpha_a must lie in (0, 1], got {alpha_a}")));
    }
    if let Some((p, q)) = decimal_fraction(alpha_a) {
        return Ok((q - p) as f64 / p as f64);
    }
    Ok((1.0 - alpha_a) / alpha_a)
}

// `x = p / q` with q a power of ten, from the shortest round-trip decimal.
fn decimal_fraction(x: f64) -> Option<(u64, u64)> {
    let s = format!("{x}");
    let (int, frac) = s.split_once('.').unwrap_or((&s, ""));
    if frac.len() > 15 || int.len() > 3 {
        return None;
    }
    let q = 10u64.checked_pow(frac.len() as u32)?;
    let p = format!("{int}{frac}").parse::<u64>().ok()?;
    // Both sides must be exact in f64 for the final division to round once.
    (p < 1 << 53 && q < 1 << 53).then_some((p, q))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "guaranteed")]
    Guaranteed,
    #[serde(rename = "not-guaranteed")]
    NotGuaranteed,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::Guaranteed => "guaranteed",
            Verdict::NotGuaranteed => "not-guaranteed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionVerdict {
    pub verdict: Verdict,
    /// Lipschitz constant of the loss-matched projection, when known.
    pub lipschitz: Option<f64>,
    /// Contraction holds for `α < bound = 1/K²`.
    pub bound: Option<f64>,
    pub note: String,
}

/// Sufficient condition `K² α < 1` with `K = 1` for MSE and `K = 2` for MAE.
pub fn check_contraction_condition(loss: &LossSpec, alpha: f64) -> ContractionVerdict {
    let k = match loss {
        LossSpec::Mse => Some(1.0),
        LossSpec::Mae => Some(2.0),
        LossSpec::Huber { .. } => None,
    };
    match k {
        Some(k) => {
            let bound = 1.0 / (k * k);
            let ok = (0.0..bound).contains(&alpha);
            ContractionVerdict {
                verdict: if ok { Verdict::Guaranteed } else { Verdict::NotGuaranteed },
                lipschitz: Some(k),
                bound: Some(bound),
                note: format!("{} projection has K = {k}; contraction needs alpha in [0, {bound})", loss.name()),
            }
        }
        None => ContractionVerdict {
            verdict: Verdict::NotGuaranteed,
            lipschitz: None,
            bound: None,
            note: "no Lipschitz constant is known for the huber projection".into(),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Infeasible,
    Feasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub converged: bool,
    pub polished: bool,
    /// The trust-ball problem was rejected and `z` fell back to the center.
    pub fallback: bool,
}

impl SolveSummary {
    fn of(r: &SolverReport) -> Self {
        SolveSummary {
            iterations: r.iterations,
            primal_residual: r.primal_residual,
            dual_residual: r.dual_residual,
            converged: r.converged,
            polished: r.polished,
            fallback: false,
        }
    }
}

/// State at iteration `i`: the prediction `ŷⁱ`, its metrics, and the
/// adjustment `zⁱ` computed from it (absent on the last iteration).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub y_hat: Vec<f64>,
    pub r2_train: Option<f64>,
    pub r2_test: Option<f64>,
    pub c_train: Option<f64>,
    pub c_test: Option<f64>,
    /// `‖ŷⁱ − ŷⁱ⁻¹‖` in the loss-matched norm.
    pub residual: Option<f64>,
    /// `‖ŷⁱ − ŷⁱ⁻¹‖ / ‖ŷⁱ⁻¹ − ŷⁱ⁻²‖`.
    pub contraction_ratio: Option<f64>,
    pub member: bool,
    pub branch: Option<Branch>,
    pub z: Option<Vec<f64>>,
    pub solver: Option<SolveSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationHistory {
    pub algorithm: Algorithm,
    pub alpha: f64,
    pub alpha_m: Option<f64>,
    pub beta: f64,
    pub loss: LossSpec,
    pub norm: String,
    pub epsilon: Option<f64>,
    pub y_train_didi: Option<f64>,
    pub records: Vec<IterationRecord>,
    pub stopped_early: bool,
    pub verdict: ContractionVerdict,
}

impl IterationHistory {
    pub fn last(&self) -> &IterationRecord {
        self.records.last().expect("history has at least one record")
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.residual).collect()
    }

    pub fn adjusted_targets(&self) -> Vec<&[f64]> {
        self.records.iter().filter_map(|r| r.z.as_deref()).collect()
    }

    pub fn curve(&self) -> FoldCurve {
        let col = |f: fn(&IterationRecord) -> Option<f64>| self.records.iter().map(f).collect();
        FoldCurve {
            r2_train: col(|r| r.r2_train),
            r2_test: col(|r| r.r2_test),
            c_train: col(|r| r.c_train),
            c_test: col(|r| r.c_test),
            residual: col(|r| r.residual),
        }
    }

    /// Share of adjustment steps that took each branch, `(infeasible, feasible)`.
    pub fn branch_counts(&self) -> (usize, usize) {
        self.records.iter().fold((0, 0), |(a, b), r| match r.branch {
            Some(Branch::Infeasible) => (a + 1, b),
            Some(Branch::Feasible) => (a, b + 1),
            None => (a, b),
        })
    }
}

/// Constraint set for a training fold and the `ε` it was built with.
pub fn build_constraints(config: &RunConfig, train: &Dataset) -> Result<(ConstraintSet, Option<f64>)> {
    let n = train.n();
    let didi = |eps: f64| -> Result<ConstraintSet> {
        if train.protected.is_empty() {
            return Err(Error::Config("didi constraints need at least one protected column".into()));
        }
        build_didi_constraints(&train.protected, eps, n)
    };
    let (cs, eps) = match &config.constraints {
        ConstraintSource::Didi { fraction } => {
            let eps = fraction * didi_value(&train.y, &train.protected)?;
            (didi(eps)?, Some(eps))
        }
        ConstraintSource::DidiEpsilon { epsilon } => (didi(*epsilon)?, Some(*epsilon)),
        ConstraintSource::Fixed(cs) => {
            check_dim(n, cs.n())?;
            (cs.clone(), None)
        }
    };
    let cs = match config.bounds {
        Some((lo, hi)) => intersect(&cs, &build_box(lo, hi, n)?)?,
        None => cs,
    };
    Ok((cs, eps))
}

pub fn run(config: &RunConfig, train: &Dataset, test: Option<&Dataset>) -> Result<IterationHistory> {
    config.validate()?;
    let (cs, eps) = build_constraints(config, train)?;
    run_with_constraints(config, &cs, eps, train, test)
}

pub fn run_affine_extension(config: &RunConfig, train: &Dataset, test: Option<&Dataset>) -> Result<IterationHistory> {
    run(&RunConfig { algorithm: Algorithm::AffineExtension, ..config.clone() }, train, test)
}

pub fn run_moving_targets(config: &RunConfig, train: &Dataset, test: Option<&Dataset>) -> Result<IterationHistory> {
    run(&RunConfig { algorithm: Algorithm::MovingTargets, ..config.clone() }, train, test)
}

/// Run against an already built constraint set; `config.constraints` and
/// `config.bounds` are ignored.
pub fn run_with_constraints(
    config: &RunConfig,
    cs: &ConstraintSet,
    epsilon: Option<f64>,
    train: &Dataset,
    test: Option<&Dataset>,
) -> Result<IterationHistory> {
    config.validate()?;
    check_dim(train.n(), cs.n())?;
    let y = &train.y;
    let loss = config.loss;
    let norm = loss.matched_norm();
    let learner = LearnerSpec { seed: config.learner.seed ^ config.seed, ..config.learner.clone() };
    let alpha_m = match config.algorithm {
        Algorithm::AffineExtension => None,
        Algorithm::MovingTargets => Some(alpha_convert(config.alpha)?),
    };

    let y_train_didi = if train.protected.is_empty() { None } else { Some(didi_value(y, &train.protected)?) };
    let ratio = |pred: &[f64], data: &Dataset| -> Result<Option<f64>> {
        match y_train_didi {
            Some(d) if d > 0.0 && !data.protected.is_empty() => Ok(Some(didi_value(pred, &data.protected)? / d)),
            _ => Ok(None),
        }
    };

    let mut model = range_projection_fit(&learner, &train.x, y, &loss)?;
    let mut y_hat = model.training_predictions.clone();
    let mut prev: Option<Vec<f64>> = None;
    let mut prev_residual: Option<f64> = None;
    let mut warm_infeasible: Option<WarmStart> = None;
    let mut warm_feasible: Option<WarmStart> = None;
    let use_warm = config.solver.warm_start;
    let mut records = Vec::with_capacity(config.iterations);
    let mut stopped_early = false;

    for i in 1..=config.iterations {
        let residual = prev.as_ref().map(|p| norm.distance(&y_hat, p));
        let contraction_ratio = match (residual, prev_residual) {
            (Some(r), Some(p)) if p > 0.0 => Some(r / p),
            _ => None,
        };
        let (r2_test, c_test) = match test {
            Some(t) if t.n() > 0 => {
                let p = predict(&model, &t.x)?;
                (r_squared(&t.y, &p).ok(), ratio(&p, t)?)
            }
            _ => (None, None),
        };
        let member = cs.is_member(&y_hat, config.membership_tol)?;
        let mut rec = IterationRecord {
            iteration: i,
            y_hat: y_hat.clone(),
            r2_train: r_squared(y, &y_hat).ok(),
            r2_test,
            c_train: ratio(&y_hat, train)?,
            c_test,
            residual,
            contraction_ratio,
            member,
            branch: None,
            z: None,
            solver: None,
        };
        if let (Some(tol), Some(r)) = (config.early_stop, residual) {
            if r < tol {
                debug!("early stop at iteration {i}: residual {r:e}");
                records.push(rec);
                stopped_early = true;
                break;
            }
        }
        if i == config.iterations {
            records.push(rec);
            break;
        }

        let (branch, z, summary) = if !member {
            let warm = if use_warm { warm_infeasible.as_ref() } else { None };
            let report = match alpha_m {
                None => {
                    let anchor: Vec<f64> = y.iter().zip(&y_hat).map(|(a, b)| (1.0 - config.alpha) * a + config.alpha * b).collect();
                    minimize_terms(&loss, &[(1.0, &anchor)], cs, &config.solver, warm)?
                }
                Some(am) => minimize_terms(&loss, &[(1.0, y), (1.0 / am, &y_hat)], cs, &config.solver, warm)?,
            };
            let summary = SolveSummary::of(&report);
            warm_infeasible = Some(report.warm);
            (Branch::Infeasible, report.solution, summary)
        } else {
            let warm = if use_warm { warm_feasible.as_ref() } else { None };
            match project_ball_intersection_warm(&loss, y, &y_hat, config.beta, cs, &config.solver, warm) {
                Ok(report) => {
                    let summary = SolveSummary::of(&report);
                    warm_feasible = Some(report.warm);
                    (Branch::Feasible, report.solution, summary)
                }
                Err(Error::Infeasible) => {
                    warn!("iteration {i}: trust-ball problem rejected, keeping the current prediction");
                    let summary = SolveSummary {
                        iterations: 0,
                        primal_residual: 0.0,
                        dual_residual: 0.0,
                        converged: true,
                        polished: false,
                        fallback: true,
                    };
                    (Branch::Feasible, y_hat.clone(), summary)
                }
                Err(e) => return Err(e),
            }
        };
        if !summary.converged {
            warn!(
                "iteration {i}: adjustment solver stopped after {} iterations (primal {:e}, dual {:e})",
                summary.iterations, summary.primal_residual, summary.dual_residual
            );
            if config.fail_hard {
                return Err(Error::NotConverged { iteration: i });
            }
        }
        model = range_projection_fit(&learner, &train.x, &z, &loss)?;
        rec.branch = Some(branch);
        rec.z = Some(z);
        rec.solver = Some(summary);
        records.push(rec);

        prev = Some(std::mem::replace(&mut y_hat, model.training_predictions.clone()));
        prev_residual = residual;
    }

    Ok(IterationHistory {
        algorithm: config.algorithm,
        alpha: config.alpha,
        alpha_m,
        beta: config.beta,
        loss,
        norm: match norm {
            MatchedNorm::L1 => "l1".into(),
            MatchedNorm::L2 => "l2".into(),
        },
        epsilon,
        y_train_didi,
        records,
        stopped_early,
        verdict: check_contraction_condition(&loss, config.alpha),
    })
}
