//! Cross-validated experiments driven by a config file, and the tables built
//! from their histories.

mod config;
mod history;

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{ConstraintConfig, DatasetConfig, ExperimentConfig, Format, LossName, Normalization, OutputConfig, RunBlock};
pub use history::{csv_float, to_json, FailureLine, FixedFloats, FoldLine, FoldOutcome, HistoryFile, HistoryHeader, HistoryLine, IterationLine};

use crate::data::{build_protected, complement, kfold_indices, load_csv, ordinal_encode, ColumnSchema, Dataset, Normalizer, RawTable, SHUFFLE_ALGORITHM};
use crate::driver::{self, check_contraction_condition, Algorithm, ConstraintSource, ContractionVerdict};
use crate::error::{Error, Result};
use crate::metrics::{significance_flag, summarize_folds, Direction, FoldSummary, MeanStd, Significance};

/// Exit status contract of the command-line front end.
#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    /// Bad config, missing or malformed input. Exit code 2.
    #[error("{0}")]
    Config(Error),
    /// Failure while running. Exit code 1.
    #[error("{0}")]
    Runtime(Error),
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) => 2,
            CommandError::Runtime(_) => 1,
        }
    }
}

/// Encoded table with the target located.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub table: RawTable,
    pub target: usize,
}

/// Load the CSV, add frequency columns, ordinal-encode categoricals.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let schema = ColumnSchema { drop: cfg.dataset.drop.clone() };
    let mut table = load_csv(cfg.dataset_path(), &schema)?;
    cfg.validate_columns(&table.columns)?;
    for c in &cfg.dataset.value_counts {
        table.add_value_count(c)?;
    }
    let cats = cfg.dataset.categorical.iter().map(|c| table.column_index(c)).collect::<Result<Vec<_>>>()?;
    let table = ordinal_encode(&table, &cats)?;
    let target = table.column_index(&cfg.dataset.target)?;
    Ok(Prepared { table, target })
}

#[derive(Debug, Clone)]
pub struct FoldData {
    pub train: Dataset,
    pub test: Option<Dataset>,
}

fn with_protected(mut ds: Dataset, names: &[String]) -> Result<Dataset> {
    let idx = names.iter().map(|n| ds.feature_index(n)).collect::<Result<Vec<_>>>()?;
    ds.protected = build_protected(&ds, &idx)?;
    Ok(ds)
}

/// Normalized train/test datasets for every fold.
pub fn fold_data(cfg: &ExperimentConfig, prepared: &Prepared) -> Result<Vec<FoldData>> {
    let table = &prepared.table;
    let protected = &cfg.dataset.protected;
    let k = cfg.run.folds;
    if k == 1 {
        let train = Normalizer::fit(table, prepared.target)?.transform(table, false)?;
        return Ok(vec![FoldData { train: with_protected(train, protected)?, test: None }]);
    }
    let full = match cfg.dataset.normalize {
        Normalization::Full => Some(Normalizer::fit(table, prepared.target)?),
        Normalization::TrainFold => None,
    };
    kfold_indices(table.n_rows(), k, cfg.run.seed)?
        .iter()
        .map(|test_rows| {
            let train_table = table.select_rows(&complement(table.n_rows(), test_rows));
            let test_table = table.select_rows(test_rows);
            let norm = match &full {
                Some(n) => n.clone(),
                None => Normalizer::fit(&train_table, prepared.target)?,
            };
            let train = with_protected(norm.transform(&train_table, false)?, protected)?;
            let test = with_protected(norm.transform(&test_table, true)?, protected)?;
            Ok(FoldData { train, test: Some(test) })
        })
        .collect()
}

/// One `(algorithm, α)` pair across all folds.
#[derive(Debug, Clone, PartialEq)]
pub struct Setting {
    pub algorithm: Algorithm,
    pub alpha: f64,
}

impl Setting {
    pub fn file_stem(&self) -> String {
        format!("history_{}_alpha{}", self.algorithm.name(), self.alpha)
    }
}

pub fn settings(cfg: &ExperimentConfig) -> Vec<Setting> {
    cfg.run.algorithms.iter().flat_map(|&algorithm| cfg.run.alphas.iter().map(move |&alpha| Setting { algorithm, alpha })).collect()
}

fn header(cfg: &ExperimentConfig, s: &Setting) -> Result<HistoryHeader> {
    let loss = cfg.loss();
    let alpha_m = match s.algorithm {
        Algorithm::AffineExtension => None,
        Algorithm::MovingTargets => Some(driver::alpha_convert(s.alpha)?),
    };
    let constraint = match cfg.constraint_source() {
        ConstraintSource::Didi { fraction } => format!("didi <= {fraction} * didi(y_train)"),
        ConstraintSource::DidiEpsilon { epsilon } => format!("didi <= {epsilon}"),
        ConstraintSource::Fixed(_) => "fixed".into(),
    };
    Ok(HistoryHeader {
        format: history::FORMAT_VERSION,
        dataset: cfg.dataset.path.display().to_string(),
        target: cfg.dataset.target.clone(),
        protected: cfg.dataset.protected.clone(),
        normalize: cfg.dataset.normalize.name().into(),
        folds: cfg.run.folds,
        seed: cfg.run.seed,
        shuffle: SHUFFLE_ALGORITHM.into(),
        algorithm: s.algorithm,
        alpha: s.alpha,
        alpha_m,
        beta: cfg.run.beta,
        iterations: cfg.run.iterations,
        loss,
        norm: match loss.matched_norm() {
            crate::losses::MatchedNorm::L1 => "l1".into(),
            crate::losses::MatchedNorm::L2 => "l2".into(),
        },
        learner: cfg.learner.clone(),
        constraint,
        verdict: check_contraction_condition(&loss, s.alpha),
        std_kind: "population".into(),
    })
}

/// Summary of one setting as written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingSummary {
    pub algorithm: Algorithm,
    pub alpha: f64,
    pub alpha_m: Option<f64>,
    pub verdict: ContractionVerdict,
    pub failed_folds: Vec<usize>,
    /// Over the folds that completed; absent when none did.
    pub summary: Option<FoldSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub dataset: String,
    pub normalize: String,
    pub folds: usize,
    pub seed: u64,
    pub std_kind: String,
    pub settings: Vec<SettingSummary>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub histories: Vec<HistoryFile>,
    pub summary: RunSummary,
    pub failures: usize,
}

fn summarize(h: &HistoryFile) -> Result<SettingSummary> {
    let curves: Vec<_> = h.histories().map(|(_, hist)| hist.curve()).collect();
    let failed_folds = h.folds.iter().enumerate().filter(|(_, f)| matches!(f, FoldOutcome::Failed(_))).map(|(i, _)| i).collect();
    Ok(SettingSummary {
        algorithm: h.header.algorithm,
        alpha: h.header.alpha,
        alpha_m: h.header.alpha_m,
        verdict: h.header.verdict.clone(),
        failed_folds,
        summary: if curves.is_empty() { None } else { Some(summarize_folds(&curves)?) },
    })
}

/// Run every `(algorithm, α, fold)` triple on a pool of `jobs` workers
/// (0 = one per core) and collect the results in a fixed order.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> std::result::Result<RunOutput, CommandError> {
    cfg.validate().map_err(CommandError::Config)?;
    let prepared = prepare(cfg).map_err(CommandError::Config)?;
    let folds = fold_data(cfg, &prepared).map_err(CommandError::Config)?;
    let settings = settings(cfg);
    let tasks: Vec<(usize, usize)> = (0..settings.len()).flat_map(|s| (0..folds.len()).map(move |f| (s, f))).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CommandError::Runtime(Error::Config(format!("worker pool: {e}"))))?;
    let results: Vec<FoldOutcome> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(s, f)| {
                let setting = &settings[s];
                let rc = cfg.run_config(setting.algorithm, setting.alpha);
                let data = &folds[f];
                match driver::run(&rc, &data.train, data.test.as_ref()) {
                    Ok(mut history) => {
                        info!("{} alpha {} fold {f}: done", setting.algorithm.name(), setting.alpha);
                        if !cfg.output.vectors {
                            for r in &mut history.records {
                                r.y_hat.clear();
                                r.z = None;
                            }
                        }
                        FoldOutcome::Done { n_train: data.train.n(), n_test: data.test.as_ref().map_or(0, Dataset::n), history }
                    }
                    Err(e) => {
                        warn!("{} alpha {} fold {f}: {e}", setting.algorithm.name(), setting.alpha);
                        FoldOutcome::Failed(e.to_string())
                    }
                }
            })
            .collect()
    });

    let mut results = results.into_iter();
    let mut histories = Vec::with_capacity(settings.len());
    for s in &settings {
        let header = header(cfg, s).map_err(CommandError::Config)?;
        let folds: Vec<FoldOutcome> = results.by_ref().take(folds.len()).collect();
        histories.push(HistoryFile { header, folds });
    }
    let failures = histories.iter().flat_map(|h| &h.folds).filter(|f| matches!(f, FoldOutcome::Failed(_))).count();
    let summary = RunSummary {
        dataset: cfg.dataset.path.display().to_string(),
        normalize: cfg.dataset.normalize.name().into(),
        folds: cfg.run.folds,
        seed: cfg.run.seed,
        std_kind: "population".into(),
        settings: histories.iter().map(summarize).collect::<Result<_>>().map_err(CommandError::Runtime)?,
    };
    Ok(RunOutput { histories, summary, failures })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

pub const SUMMARY_HEADER: &str =
    "algorithm,alpha,alpha_m,folds,failed,r2_train_mean,r2_train_std,r2_test_mean,r2_test_std,c_train_mean,c_train_std,c_test_mean,c_test_std,verdict";

pub fn summary_csv(summary: &RunSummary) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    let ms = |m: Option<MeanStd>| [csv_float(m.map(|v| v.mean)), csv_float(m.map(|v| v.std))];
    for s in &summary.settings {
        let f = s.summary.as_ref();
        let mut cells = vec![
            s.algorithm.name().to_string(),
            csv_float(Some(s.alpha)),
            csv_float(s.alpha_m),
            f.map_or(0, |f| f.folds).to_string(),
            s.failed_folds.len().to_string(),
        ];
        for m in [f.and_then(|f| f.r2_train), f.and_then(|f| f.r2_test), f.and_then(|f| f.c_train), f.and_then(|f| f.c_test)] {
            cells.extend(ms(m));
        }
        cells.push(s.verdict.verdict.label().to_string());
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Write histories, summaries and the error log into `dir`. Returns the
/// paths written.
pub fn write_outputs(cfg: &ExperimentConfig, out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.display().to_string(), source })?;
    let mut written = Vec::new();
    let formats = &cfg.output.formats;
    if formats.contains(&Format::Jsonl) {
        for (h, s) in out.histories.iter().zip(settings(cfg)) {
            let path = dir.join(format!("{}.jsonl", s.file_stem()));
            let mut buf = Vec::new();
            h.write(&mut buf)?;
            write_file(&path, &buf)?;
            written.push(path);
        }
    }
    if formats.contains(&Format::Csv) {
        let path = dir.join("summary.csv");
        write_file(&path, summary_csv(&out.summary).as_bytes())?;
        written.push(path);
    }
    if formats.contains(&Format::Json) {
        let path = dir.join("summary.json");
        let mut text = to_json(&out.summary, true)?;
        text.push('\n');
        write_file(&path, text.as_bytes())?;
        written.push(path);
    }
    let mut errors = String::new();
    for h in &out.histories {
        for (fold, f) in h.folds.iter().enumerate() {
            if let FoldOutcome::Failed(message) = f {
                #[derive(Serialize)]
                struct ErrorRecord<'a> {
                    algorithm: Algorithm,
                    alpha: f64,
                    fold: usize,
                    message: &'a str,
                }
                let rec = ErrorRecord { algorithm: h.header.algorithm, alpha: h.header.alpha, fold, message };
                errors.push_str(&to_json(&rec, false)?);
                errors.push('\n');
            }
        }
    }
    let path = dir.join("errors.jsonl");
    write_file(&path, errors.as_bytes())?;
    written.push(path);
    Ok(written)
}

/// `run` subcommand: experiment plus outputs. Per-run failures are recorded
/// and reported as a runtime failure once everything is written.
pub fn cmd_run(cfg: &ExperimentConfig, out_dir: &Path, jobs: usize) -> std::result::Result<RunOutput, CommandError> {
    let out = run_experiment(cfg, jobs)?;
    write_outputs(cfg, &out, out_dir).map_err(CommandError::Runtime)?;
    if out.failures > 0 {
        return Err(CommandError::Runtime(Error::Mismatch(format!(
            "{} run(s) failed; see {}",
            out.failures,
            out_dir.join("errors.jsonl").display()
        ))));
    }
    Ok(out)
}

/// Which split R² and C are read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Test,
}

pub const PLOT_HEADER: &str = "iteration,r2_mean,r2_std,c_mean,c_std,residual_mean";

/// Per-iteration fold mean and standard deviation of R² and C, and the mean
/// fixed-point residual.
pub fn plotdata(h: &HistoryFile, split: Split) -> Result<String> {
    let curves: Vec<_> = h.histories().map(|(_, hist)| hist.curve()).collect();
    if curves.is_empty() {
        return Err(Error::InvalidParameter("history has no completed folds".into()));
    }
    let s = summarize_folds(&curves)?;
    let mut out = String::from(PLOT_HEADER);
    out.push('\n');
    for it in &s.curve {
        let (r2, c) = match split {
            Split::Train => (it.r2_train, it.c_train),
            Split::Test => (it.r2_test, it.c_test),
        };
        let cells = [
            it.iteration.to_string(),
            csv_float(r2.map(|m| m.mean)),
            csv_float(r2.map(|m| m.std)),
            csv_float(c.map(|m| m.mean)),
            csv_float(c.map(|m| m.std)),
            csv_float(it.residual.map(|m| m.mean)),
        ];
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub direction: Direction,
    pub a: MeanStd,
    pub m: MeanStd,
    pub flag: Significance,
}

fn same_protocol(a: &HistoryHeader, m: &HistoryHeader) -> Result<()> {
    let checks = [
        ("dataset", a.dataset == m.dataset),
        ("target", a.target == m.target),
        ("protected", a.protected == m.protected),
        ("normalize", a.normalize == m.normalize),
        ("folds", a.folds == m.folds),
        ("seed", a.seed == m.seed),
        ("loss", a.loss == m.loss),
        ("iterations", a.iterations == m.iterations),
    ];
    match checks.iter().find(|(_, ok)| !ok) {
        Some((name, _)) => Err(Error::Mismatch(format!("histories differ in protocol field {name:?}"))),
        None => Ok(()),
    }
}

/// Final-iteration metrics of two histories with the σ-sum significance rule.
pub fn compare(a: &HistoryFile, m: &HistoryFile) -> Result<Vec<ComparisonRow>> {
    same_protocol(&a.header, &m.header)?;
    let done = |h: &HistoryFile| h.histories().map(|(i, _)| i).collect::<Vec<_>>();
    if done(a) != done(m) {
        return Err(Error::Mismatch("histories completed different folds".into()));
    }
    let finals = |h: &HistoryFile, pick: fn(&driver::IterationRecord) -> Option<f64>| -> Option<Vec<f64>> {
        h.histories().map(|(_, hist)| pick(hist.last())).collect()
    };
    let metrics: [(&str, Direction, fn(&driver::IterationRecord) -> Option<f64>); 4] = [
        ("r2_train", Direction::HigherIsBetter, |r| r.r2_train),
        ("r2_test", Direction::HigherIsBetter, |r| r.r2_test),
        ("c_train", Direction::LowerIsBetter, |r| r.c_train),
        ("c_test", Direction::LowerIsBetter, |r| r.c_test),
    ];
    let mut rows = Vec::new();
    for (name, direction, pick) in metrics {
        let (Some(va), Some(vm)) = (finals(a, pick), finals(m, pick)) else { continue };
        if va.is_empty() {
            continue;
        }
        let (sa, sm) = (MeanStd::of(&va), MeanStd::of(&vm));
        rows.push(ComparisonRow {
            metric: name.into(),
            direction,
            a: sa,
            m: sm,
            flag: significance_flag(sa.mean, sa.std, sm.mean, sm.std, direction),
        });
    }
    Ok(rows)
}

pub const COMPARE_HEADER: &str = "metric,direction,mean_a,std_a,mean_m,std_m,flag";

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from(COMPARE_HEADER);
    out.push('\n');
    for r in rows {
        let dir = match r.direction {
            Direction::HigherIsBetter => "higher_is_better",
            Direction::LowerIsBetter => "lower_is_better",
        };
        let cells = [
            r.metric.clone(),
            dir.into(),
            csv_float(Some(r.a.mean)),
            csv_float(Some(r.a.std)),
            csv_float(Some(r.m.mean)),
            csv_float(Some(r.m.std)),
            r.flag.label().into(),
        ];
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
