//! Tabular ingestion: CSV loading, ordinal encoding, min–max normalization,
//! protected-feature grouping and k-fold splitting.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of the generator used for fold shuffling, recorded in run outputs.
pub const SHUFFLE_ALGORITHM: &str = "chacha8 (rand_chacha 0.3) + Fisher-Yates (rand 0.8 SliceRandom::shuffle)";

const MISSING_MARKERS: [&str; 5] = ["", "NA", "NaN", "nan", "?"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Num(f64),
    Text(String),
}

impl Cell {
    fn parse(raw: &str) -> Option<Cell> {
        let s = raw.trim();
        if MISSING_MARKERS.contains(&s) {
            return None;
        }
        Some(match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Cell::Num(v),
            _ => Cell::Text(s.to_string()),
        })
    }

    fn key(&self) -> String {
        match self {
            Cell::Num(v) => format!("{v:?}"),
            Cell::Text(s) => s.clone(),
        }
    }
}

/// A rectangular table of parsed cells with unique column names.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Rows removed at load time because a retained column was missing.
    pub dropped_rows: usize,
    /// Per encoded column, the raw values in code order (code `i` ↔ `values[i]`).
    pub encodings: BTreeMap<String, Vec<String>>,
}

/// Which columns of a CSV to keep.
#[derive(Debug, Clone, Default)]
pub struct ColumnSchema {
    pub drop: Vec<String>,
}

impl RawTable {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<Cell>>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for c in &columns {
            if !seen.insert(c) {
                return Err(Error::InvalidParameter(format!("duplicate column name {c:?}")));
            }
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != columns.len() {
                return Err(Error::Parse {
                    line: i as u64 + 2,
                    message: format!("expected {} cells, found {}", columns.len(), r.len()),
                });
            }
        }
        if rows.is_empty() {
            return Err(Error::EmptyTable);
        }
        Ok(Self { columns, rows, dropped_rows: 0, encodings: BTreeMap::new() })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn select_rows(&self, indices: &[usize]) -> RawTable {
        RawTable {
            columns: self.columns.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            dropped_rows: 0,
            encodings: self.encodings.clone(),
        }
    }

    /// Append a `<name>_Count` column holding how often each row's value of
    /// `name` occurs in the table.
    pub fn add_value_count(&mut self, name: &str) -> Result<()> {
        let idx = self.column_index(name)?;
        let mut counts: HashMap<String, usize> = HashMap::new();
        for r in &self.rows {
            *counts.entry(r[idx].key()).or_default() += 1;
        }
        let new_name = format!("{name}_Count");
        if self.columns.contains(&new_name) {
            return Err(Error::InvalidParameter(format!("duplicate column name {new_name:?}")));
        }
        self.columns.push(new_name);
        for r in &mut self.rows {
            let c = counts[&r[idx].key()];
            r.push(Cell::Num(c as f64));
        }
        Ok(())
    }
}

/// Read a headed CSV file, dropping `schema.drop` columns and any row with a
/// missing value in a retained column.
pub fn load_csv(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<RawTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &ColumnSchema) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let csv_err = |e: csv::Error| Error::Parse {
        line: e.position().map(|p| p.line()).unwrap_or(0),
        message: e.to_string(),
    };
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.is_empty() || headers.iter().all(|h| h.trim().is_empty()) {
        return Err(Error::EmptyTable);
    }
    for d in &schema.drop {
        if !headers.iter().any(|h| h.trim() == d) {
            return Err(Error::UnknownColumn(d.clone()));
        }
    }
    let keep: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !schema.drop.iter().any(|d| d == h.trim()))
        .map(|(i, _)| i)
        .collect();
    let columns: Vec<String> = keep.iter().map(|&i| headers[i].trim().to_string()).collect();

    let mut rows = Vec::new();
    let mut dropped = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let cells: Option<Vec<Cell>> = keep.iter().map(|&i| Cell::parse(&rec[i])).collect();
        match cells {
            Some(c) => rows.push(c),
            None => dropped += 1,
        }
    }
    if dropped > 0 {
        log::info!("dropped {dropped} row(s) with missing values");
    }
    let mut table = RawTable::new(columns, rows)?;
    table.dropped_rows = dropped;
    Ok(table)
}

/// Replace each listed column's values by consecutive integer codes in order
/// of first appearance. The code book is stored in `encodings`.
pub fn ordinal_encode(table: &RawTable, categorical_columns: &[usize]) -> Result<RawTable> {
    let mut out = table.clone();
    for &col in categorical_columns {
        if col >= table.n_cols() {
            return Err(Error::InvalidParameter(format!("column index {col} out of range")));
        }
        let mut codes: HashMap<String, usize> = HashMap::new();
        let mut book: Vec<String> = Vec::new();
        for row in &mut out.rows {
            let key = row[col].key();
            let next = codes.len();
            let code = *codes.entry(key.clone()).or_insert_with(|| {
                book.push(key);
                next
            });
            row[col] = Cell::Num(code as f64);
        }
        out.encodings.insert(table.columns[col].clone(), book);
    }
    Ok(out)
}

/// Min–max parameters for one column; `inverse` undoes `forward`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Self {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        MinMax { min, max }
    }

    /// Constant columns map to 0.
    pub fn forward(&self, v: f64) -> f64 {
        let span = self.max - self.min;
        if span > 0.0 {
            (v - self.min) / span
        } else {
            0.0
        }
    }

    pub fn inverse(&self, u: f64) -> f64 {
        self.min + u * (self.max - self.min)
    }
}

/// Row sets of one protected feature, keyed by encoded (normalized) value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtectedSpec {
    pub feature_index: usize,
    pub name: String,
    /// `(value, rows)` sorted by value; rows are 0-based and ascending.
    pub groups: Vec<(f64, Vec<usize>)>,
}

impl ProtectedSpec {
    pub fn from_column(feature_index: usize, name: &str, column: &[f64]) -> Self {
        let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
        let mut order: Vec<usize> = (0..column.len()).collect();
        order.sort_by(|&a, &b| column[a].total_cmp(&column[b]).then(a.cmp(&b)));
        for i in order {
            match groups.last_mut() {
                Some((v, rows)) if v.to_bits() == column[i].to_bits() => rows.push(i),
                _ => groups.push((column[i], vec![i])),
            }
        }
        ProtectedSpec { feature_index, name: name.to_string(), groups }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `n × d`, every entry in `[0, 1]`.
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub protected: Vec<ProtectedSpec>,
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub feature_params: Vec<MinMax>,
    pub target_params: MinMax,
}

impl Dataset {
    /// Build a dataset directly from normalized arrays (no protected features).
    pub fn from_parts(x: DMatrix<f64>, y: Vec<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Dimension { expected: x.nrows(), got: y.len() });
        }
        if y.is_empty() || x.ncols() == 0 {
            return Err(Error::EmptyTable);
        }
        let d = x.ncols();
        Ok(Dataset {
            feature_names: (0..d).map(|j| format!("x{j}")).collect(),
            feature_params: vec![MinMax { min: 0.0, max: 1.0 }; d],
            target_params: MinMax { min: 0.0, max: 1.0 },
            target_name: "y".into(),
            protected: Vec::new(),
            x,
            y,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.feature_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    /// Rows `indices` as a new dataset; protected groups are rebuilt on the
    /// subset.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let x = DMatrix::from_fn(indices.len(), self.d(), |i, j| self.x[(indices[i], j)]);
        let y: Vec<f64> = indices.iter().map(|&i| self.y[i]).collect();
        let protected = self
            .protected
            .iter()
            .map(|p| {
                let col: Vec<f64> = x.column(p.feature_index).iter().copied().collect();
                ProtectedSpec::from_column(p.feature_index, &p.name, &col)
            })
            .collect();
        Dataset { x, y, protected, ..self.clone_meta() }
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            x: DMatrix::zeros(0, 0),
            y: Vec::new(),
            protected: Vec::new(),
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            feature_params: self.feature_params.clone(),
            target_params: self.target_params.clone(),
        }
    }

    pub fn inverse_target(&self, u: &[f64]) -> Vec<f64> {
        u.iter().map(|&v| self.target_params.inverse(v)).collect()
    }
}

/// Fitted per-column min–max parameters for a table layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub target_column: usize,
    pub params: Vec<MinMax>,
}

fn numeric_column(table: &RawTable, col: usize) -> Result<Vec<f64>> {
    table
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| match &r[col] {
            Cell::Num(v) => Ok(*v),
            Cell::Text(s) => Err(Error::NonNumeric {
                column: table.columns[col].clone(),
                row: i + 1,
                value: s.clone(),
            }),
        })
        .collect()
}

impl Normalizer {
    pub fn fit(table: &RawTable, target_column: usize) -> Result<Self> {
        if target_column >= table.n_cols() {
            return Err(Error::InvalidParameter(format!("target column {target_column} out of range")));
        }
        let params = (0..table.n_cols())
            .map(|c| numeric_column(table, c).map(MinMax::fit))
            .collect::<Result<Vec<_>>>()?;
        Ok(Normalizer { target_column, params })
    }

    /// Apply the fitted map. With `clamp`, values outside the fitted range
    /// (possible on held-out rows) are clipped into `[0, 1]`.
    pub fn transform(&self, table: &RawTable, clamp: bool) -> Result<Dataset> {
        if table.n_cols() != self.params.len() {
            return Err(Error::Dimension { expected: self.params.len(), got: table.n_cols() });
        }
        if table.n_cols() < 2 {
            return Err(Error::InvalidParameter("need at least one feature besides the target".into()));
        }
        let n = table.n_rows();
        let feature_cols: Vec<usize> = (0..table.n_cols()).filter(|&c| c != self.target_column).collect();
        let fix = |v: f64| if clamp { v.clamp(0.0, 1.0) } else { v };
        let mut x = DMatrix::zeros(n, feature_cols.len());
        for (j, &c) in feature_cols.iter().enumerate() {
            let col = numeric_column(table, c)?;
            for (i, v) in col.into_iter().enumerate() {
                x[(i, j)] = fix(self.params[c].forward(v));
            }
        }
        let y = numeric_column(table, self.target_column)?
            .into_iter()
            .map(|v| fix(self.params[self.target_column].forward(v)))
            .collect();
        Ok(Dataset {
            x,
            y,
            protected: Vec::new(),
            feature_names: feature_cols.iter().map(|&c| table.columns[c].clone()).collect(),
            target_name: table.columns[self.target_column].clone(),
            feature_params: feature_cols.iter().map(|&c| self.params[c]).collect(),
            target_params: self.params[self.target_column],
        })
    }
}

/// Min–max normalize every column of an all-numeric table into `[0, 1]` and
/// split off the target.
pub fn normalize(table: &RawTable, target_column: usize) -> Result<Dataset> {
    Normalizer::fit(table, target_column)?.transform(table, false)
}

/// Group rows by the value of each listed feature.
///
/// Refuses features with more than `n/2` distinct values, which are almost
/// certainly continuous.
pub fn build_protected(dataset: &Dataset, feature_indices: &[usize]) -> Result<Vec<ProtectedSpec>> {
    let n = dataset.n();
    feature_indices
        .iter()
        .map(|&p| {
            if p >= dataset.d() {
                return Err(Error::InvalidParameter(format!("feature index {p} out of range")));
            }
            let col: Vec<f64> = dataset.x.column(p).iter().copied().collect();
            let spec = ProtectedSpec::from_column(p, &dataset.feature_names[p], &col);
            if 2 * spec.groups.len() > n {
                return Err(Error::ContinuousProtected(dataset.feature_names[p].clone()));
            }
            Ok(spec)
        })
        .collect()
}

/// Shuffled fold membership: `k` disjoint sorted index sets covering `0..n`,
/// sizes differing by at most one (the first `n mod k` folds are larger).
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("k must be >= 2, got {k}")));
    }
    if k > n {
        return Err(Error::InvalidParameter(format!("k = {k} exceeds row count {n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut fold = perm[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(folds)
}

/// Complement of a fold within `0..n`.
pub fn complement(n: usize, fold: &[usize]) -> Vec<usize> {
    let mut in_fold = vec![false; n];
    for &i in fold {
        in_fold[i] = true;
    }
    (0..n).filter(|&i| !in_fold[i]).collect()
}

pub fn kfold_split(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<(Dataset, Dataset)>> {
    let folds = kfold_indices(dataset.n(), k, seed)?;
    Ok(folds
        .iter()
        .map(|test| {
            let train = complement(dataset.n(), test);
            (dataset.subset(&train), dataset.subset(test))
        })
        .collect())
}
