//! Line-delimited history files: one header, then per fold a `fold` line
//! followed by its `iteration` lines (or a single `failure` line).
//!
//! Floats are written with 17 significant digits in exponent form, so the
//! text is a fixed function of the values and parses back to the same bits.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::driver::{Algorithm, ContractionVerdict, IterationHistory, IterationRecord};
use crate::error::{Error, Result};
use crate::learners::LearnerSpec;
use crate::losses::LossSpec;

pub const FORMAT_VERSION: u32 = 1;

/// JSON formatter writing every finite float as `{:.16e}`.
#[derive(Debug, Clone, Copy, Default)]
pub struct FixedFloats;

impl serde_json::ser::Formatter for FixedFloats {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> std::io::Result<()> {
        if v.is_finite() {
            write!(w, "{v:.16e}")
        } else {
            w.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, v: f32) -> std::io::Result<()> {
        self.write_f64(w, f64::from(v))
    }
}

/// Serialize `value` as one JSON document with fixed float formatting.
pub fn to_json<T: Serialize>(value: &T, pretty: bool) -> Result<String> {
    let mut buf = Vec::new();
    let res = if pretty {
        // Pretty output keeps the fixed float format by wrapping the formatter.
        let mut ser = serde_json::Serializer::with_formatter(&mut buf, PrettyFixed::default());
        value.serialize(&mut ser)
    } else {
        let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedFloats);
        value.serialize(&mut ser)
    };
    res.map_err(|e| Error::Config(format!("serialization failed: {e}")))?;
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

#[derive(Default)]
struct PrettyFixed<'a>(serde_json::ser::PrettyFormatter<'a>);

impl serde_json::ser::Formatter for PrettyFixed<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> std::io::Result<()> {
        FixedFloats.write_f64(w, v)
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Protocol and setting shared by every fold of one history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryHeader {
    pub format: u32,
    pub dataset: String,
    pub target: String,
    pub protected: Vec<String>,
    pub normalize: String,
    pub folds: usize,
    pub seed: u64,
    pub shuffle: String,
    pub algorithm: Algorithm,
    pub alpha: f64,
    pub alpha_m: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub loss: LossSpec,
    pub norm: String,
    pub learner: LearnerSpec,
    pub constraint: String,
    pub verdict: ContractionVerdict,
    pub std_kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldLine {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub epsilon: Option<f64>,
    pub y_train_didi: Option<f64>,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLine {
    pub fold: usize,
    #[serde(flatten)]
    pub record: IterationRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureLine {
    pub fold: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum HistoryLine {
    Header(HistoryHeader),
    Fold(FoldLine),
    Iteration(IterationLine),
    Failure(FailureLine),
}

/// Outcome of one fold: its history or the error that stopped it.
#[derive(Debug, Clone, PartialEq)]
pub enum FoldOutcome {
    Done { n_train: usize, n_test: usize, history: IterationHistory },
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryFile {
    pub header: HistoryHeader,
    /// Indexed by fold number.
    pub folds: Vec<FoldOutcome>,
}

impl HistoryFile {
    pub fn histories(&self) -> impl Iterator<Item = (usize, &IterationHistory)> {
        self.folds.iter().enumerate().filter_map(|(i, f)| match f {
            FoldOutcome::Done { history, .. } => Some((i, history)),
            FoldOutcome::Failed(_) => None,
        })
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |source| Error::Io { path: "<history>".into(), source };
        let mut line = |l: &HistoryLine| -> Result<()> {
            let s = to_json(l, false)?;
            writeln!(w, "{s}").map_err(io)
        };
        line(&HistoryLine::Header(self.header.clone()))?;
        for (fold, outcome) in self.folds.iter().enumerate() {
            match outcome {
                FoldOutcome::Done { n_train, n_test, history } => {
                    line(&HistoryLine::Fold(FoldLine {
                        fold,
                        n_train: *n_train,
                        n_test: *n_test,
                        epsilon: history.epsilon,
                        y_train_didi: history.y_train_didi,
                        stopped_early: history.stopped_early,
                    }))?;
                    for r in &history.records {
                        line(&HistoryLine::Iteration(IterationLine { fold, record: r.clone() }))?;
                    }
                }
                FoldOutcome::Failed(message) => line(&HistoryLine::Failure(FailureLine { fold, message: message.clone() }))?,
            }
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<HistoryFile> {
        let mut header: Option<HistoryHeader> = None;
        let mut folds: Vec<FoldOutcome> = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let lineno = i as u64 + 1;
            let line = line.map_err(|source| Error::Io { path: "<history>".into(), source })?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: HistoryLine =
                serde_json::from_str(&line).map_err(|e| Error::Parse { line: lineno, message: e.to_string() })?;
            let bad = |m: &str| Error::Parse { line: lineno, message: m.to_string() };
            match parsed {
                HistoryLine::Header(h) => {
                    if header.is_some() {
                        return Err(Error::Mismatch("file holds more than one history; give one history per file".into()));
                    }
                    header = Some(h);
                }
                HistoryLine::Fold(f) => {
                    let h = header.as_ref().ok_or_else(|| bad("fold line before header"))?;
                    if f.fold != folds.len() {
                        return Err(bad("folds out of order"));
                    }
                    folds.push(FoldOutcome::Done {
                        n_train: f.n_train,
                        n_test: f.n_test,
                        history: IterationHistory {
                            algorithm: h.algorithm,
                            alpha: h.alpha,
                            alpha_m: h.alpha_m,
                            beta: h.beta,
                            loss: h.loss,
                            norm: h.norm.clone(),
                            epsilon: f.epsilon,
                            y_train_didi: f.y_train_didi,
                            records: Vec::new(),
                            stopped_early: f.stopped_early,
                            verdict: h.verdict.clone(),
                        },
                    });
                }
                HistoryLine::Iteration(it) => match (folds.len(), folds.last_mut()) {
                    (len, Some(FoldOutcome::Done { history, .. })) if it.fold + 1 == len => history.records.push(it.record),
                    _ => return Err(bad("iteration line outside its fold")),
                },
                HistoryLine::Failure(f) => {
                    if header.is_none() || f.fold != folds.len() {
                        return Err(bad("failure line out of order"));
                    }
                    folds.push(FoldOutcome::Failed(f.message));
                }
            }
        }
        let header = header.ok_or_else(|| Error::Parse { line: 0, message: "missing header line".into() })?;
        Ok(HistoryFile { header, folds })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<HistoryFile> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        Self::read(std::io::BufReader::new(f))
    }
}

/// `{:.16e}` for present values, an empty cell otherwise.
pub fn csv_float(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.16e}"),
        _ => String::new(),
    }
}
