//! TOML experiment configuration.
//!
//! ```toml
//! [dataset]
//! path = "student.csv"          # relative to the config file
//! target = "G3"
//! protected = ["sex"]
//! drop = ["G1", "G2", "romantic"]
//! categorical = ["school", "sex"]
//! normalize = "train_fold"      # or "full"
//!
//! [constraints]
//! didi_fraction = 0.2           # or: epsilon = 0.05
//!
//! [run]
//! loss = "mse"
//! alphas = [0.1, 0.5, 0.9]
//! algorithms = ["affine_extension", "moving_targets"]
//! folds = 5
//!
//! [output]
//! dir = "out"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::driver::{Algorithm, ConstraintSource, RunConfig};
use crate::error::{Error, Result};
use crate::learners::LearnerSpec;
use crate::losses::{LossSpec, DEFAULT_HUBER_THRESHOLD};
use crate::solver::SolverOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Min–max parameters from the training rows of each fold; test rows are
    /// clipped into `[0, 1]`.
    #[default]
    TrainFold,
    Full,
}

impl Normalization {
    pub fn name(self) -> &'static str {
        match self {
            Normalization::TrainFold => "train_fold",
            Normalization::Full => "full",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub target: String,
    #[serde(default)]
    pub protected: Vec<String>,
    #[serde(default)]
    pub drop: Vec<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
    /// Columns that get a `<name>_Count` frequency companion before encoding.
    #[serde(default)]
    pub value_counts: Vec<String>,
    #[serde(default)]
    pub normalize: Normalization,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    /// `ε` as a fraction of the training fold's DIDI (0.2 when neither this
    /// nor `epsilon` is given).
    pub didi_fraction: Option<f64>,
    pub epsilon: Option<f64>,
    pub bounds: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    Mse,
    Mae,
    Huber,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunBlock {
    pub loss: LossName,
    pub huber_threshold: f64,
    pub alphas: Vec<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub algorithms: Vec<Algorithm>,
    /// 1 trains on every row with no held-out fold.
    pub folds: usize,
    pub seed: u64,
    pub membership_tol: f64,
    pub fail_hard: bool,
}

impl Default for RunBlock {
    fn default() -> Self {
        RunBlock {
            loss: LossName::Mse,
            huber_threshold: DEFAULT_HUBER_THRESHOLD,
            alphas: vec![0.1, 0.5, 0.9],
            beta: 0.1,
            iterations: 30,
            algorithms: vec![Algorithm::AffineExtension, Algorithm::MovingTargets],
            folds: 5,
            seed: 0,
            membership_tol: crate::constraints::MEMBERSHIP_TOL,
            fail_hard: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Jsonl,
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
    /// Store `ŷ` and `z` in history records.
    pub vectors: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out"), formats: vec![Format::Jsonl, Format::Csv, Format::Json], vectors: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub constraints: ConstraintConfig,
    #[serde(default)]
    pub run: RunBlock,
    #[serde(default)]
    pub learner: LearnerSpec,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub output: OutputConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn field(name: &str, message: impl std::fmt::Display) -> Error {
    Error::Config(format!("{name}: {message}"))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.base_dir.join(&self.dataset.path)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.base_dir.join(&self.output.dir)
    }

    pub fn loss(&self) -> LossSpec {
        match self.run.loss {
            LossName::Mse => LossSpec::Mse,
            LossName::Mae => LossSpec::Mae,
            LossName::Huber => LossSpec::Huber { threshold: self.run.huber_threshold },
        }
    }

    pub fn constraint_source(&self) -> ConstraintSource {
        match (self.constraints.epsilon, self.constraints.didi_fraction) {
            (Some(epsilon), _) => ConstraintSource::DidiEpsilon { epsilon },
            (None, f) => ConstraintSource::Didi { fraction: f.unwrap_or(0.2) },
        }
    }

    /// Driver settings for one `(algorithm, α)` pair.
    pub fn run_config(&self, algorithm: Algorithm, alpha: f64) -> RunConfig {
        RunConfig {
            alpha,
            beta: self.run.beta,
            iterations: self.run.iterations,
            loss: self.loss(),
            learner: self.learner.clone(),
            algorithm,
            constraints: self.constraint_source(),
            bounds: self.constraints.bounds.map(|[lo, hi]| (lo, hi)),
            membership_tol: self.run.membership_tol,
            seed: self.run.seed,
            solver: self.solver.clone(),
            early_stop: None,
            fail_hard: self.run.fail_hard,
        }
    }

    /// Checks that need nothing but the config itself.
    pub fn validate(&self) -> Result<()> {
        let r = &self.run;
        if r.alphas.is_empty() {
            return Err(field("run.alphas", "must not be empty"));
        }
        for (i, a) in r.alphas.iter().enumerate() {
            if !(0.0..1.0).contains(a) {
                return Err(field(&format!("run.alphas[{i}]"), format!("{a} is outside [0, 1)")));
            }
            if *a == 0.0 && r.algorithms.contains(&Algorithm::MovingTargets) {
                return Err(field(&format!("run.alphas[{i}]"), "moving_targets needs alpha > 0"));
            }
        }
        if r.algorithms.is_empty() {
            return Err(field("run.algorithms", "must not be empty"));
        }
        if !(r.beta >= 0.0 && r.beta.is_finite()) {
            return Err(field("run.beta", format!("{} is not a finite value >= 0", r.beta)));
        }
        if r.iterations == 0 {
            return Err(field("run.iterations", "must be >= 1"));
        }
        if r.folds == 0 {
            return Err(field("run.folds", "must be >= 1"));
        }
        if !(r.membership_tol >= 0.0) {
            return Err(field("run.membership_tol", "must be >= 0"));
        }
        if r.loss == LossName::Huber && !(r.huber_threshold > 0.0 && r.huber_threshold.is_finite()) {
            return Err(field("run.huber_threshold", "must be > 0"));
        }
        let c = &self.constraints;
        if c.epsilon.is_some() && c.didi_fraction.is_some() {
            return Err(field("constraints", "give either didi_fraction or epsilon, not both"));
        }
        if let Some(f) = c.didi_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(field("constraints.didi_fraction", format!("{f} is outside (0, 1]")));
            }
        }
        if let Some(e) = c.epsilon {
            if !(e >= 0.0) {
                return Err(field("constraints.epsilon", "must be >= 0"));
            }
        }
        if let Some([lo, hi]) = c.bounds {
            if !(lo <= hi) {
                return Err(field("constraints.bounds", format!("lower {lo} exceeds upper {hi}")));
            }
        }
        if self.dataset.protected.is_empty() {
            return Err(field("dataset.protected", "DIDI constraints need at least one protected column"));
        }
        if self.dataset.protected.contains(&self.dataset.target) {
            return Err(field("dataset.protected", "the target cannot be protected"));
        }
        if self.output.formats.is_empty() {
            return Err(field("output.formats", "must not be empty"));
        }
        self.learner.validate().map_err(|e| field("learner", e))?;
        let s = &self.solver;
        if !(s.tolerance > 0.0) || s.max_iterations == 0 || !(s.rho > 0.0) {
            return Err(field("solver", "tolerance, max_iterations and rho must be positive"));
        }
        Ok(())
    }

    /// Checks against the dataset header (after `drop`).
    pub fn validate_columns(&self, columns: &[String]) -> Result<()> {
        let has = |c: &String| columns.contains(c);
        if !has(&self.dataset.target) {
            return Err(field("dataset.target", format!("unknown column {:?}", self.dataset.target)));
        }
        for (name, list) in [
            ("dataset.protected", &self.dataset.protected),
            ("dataset.categorical", &self.dataset.categorical),
            ("dataset.value_counts", &self.dataset.value_counts),
        ] {
            if let Some(c) = list.iter().find(|c| !has(c)) {
                return Err(field(name, format!("unknown column {c:?}")));
            }
        }
        Ok(())
    }
}
