//! Tabular dataset ingestion, feature statistics and train/test splits.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MameError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    Categorical,
}

/// An `n x p` feature matrix plus per-column metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    feature_names: Vec<String>,
    feature_kinds: Vec<FeatureKind>,
    row_ids: Vec<String>,
}

impl Dataset {
    /// Builds a dataset, checking shape, finiteness and categorical coding.
    pub fn new(
        x: Array2<f64>,
        feature_names: Vec<String>,
        feature_kinds: Vec<FeatureKind>,
        row_ids: Vec<String>,
    ) -> Result<Self> {
        let (n, p) = x.dim();
        if n < 2 {
            return Err(MameError::invalid(format!("dataset needs at least 2 rows, got {n}")));
        }
        if p < 1 {
            return Err(MameError::invalid("dataset needs at least 1 feature"));
        }
        if feature_names.len() != p || feature_kinds.len() != p || row_ids.len() != n {
            return Err(MameError::invalid("metadata lengths do not match the feature matrix"));
        }
        for ((r, c), v) in x.indexed_iter() {
            if !v.is_finite() {
                return Err(MameError::invalid(format!("non-finite value at row {r}, column {c}")));
            }
            if feature_kinds[c] == FeatureKind::Categorical && (*v < 0.0 || v.fract() != 0.0) {
                return Err(MameError::invalid(format!(
                    "categorical column {c} holds non-integer code {v} at row {r}"
                )));
            }
        }
        Ok(Self {
            x,
            feature_names,
            feature_kinds,
            row_ids,
        })
    }

    /// Continuous dataset with generated names `x0..x{p-1}`.
    pub fn from_matrix(x: Array2<f64>) -> Result<Self> {
        let (n, p) = x.dim();
        Self::new(
            x,
            (0..p).map(|j| format!("x{j}")).collect(),
            vec![FeatureKind::Continuous; p],
            (0..n).map(|i| i.to_string()).collect(),
        )
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.x.row(i)
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_kinds(&self) -> &[FeatureKind] {
        &self.feature_kinds
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    /// Rows `idx` stacked into a new matrix.
    pub fn rows(&self, idx: &[usize]) -> Array2<f64> {
        self.x.select(Axis(0), idx)
    }

    /// Removes a column addressed by name or by zero-based index, returning it.
    pub fn take_column(&mut self, selector: &str) -> Result<Array1<f64>> {
        let col = self
            .feature_names
            .iter()
            .position(|name| name == selector)
            .or_else(|| selector.parse::<usize>().ok().filter(|&c| c < self.p()))
            .ok_or_else(|| MameError::invalid(format!("no column named '{selector}'")))?;
        if self.p() == 1 {
            return Err(MameError::invalid("cannot remove the only feature column"));
        }
        let taken = self.x.column(col).to_owned();
        let keep: Vec<usize> = (0..self.p()).filter(|&c| c != col).collect();
        self.x = self.x.select(Axis(1), &keep);
        self.feature_names.remove(col);
        self.feature_kinds.remove(col);
        Ok(taken)
    }
}

/// Reads a comma-separated file into a [`Dataset`].
///
/// Columns whose cells are not all numeric are treated as categorical and
/// coded by the lexicographic order of their distinct values.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool, kinds: Option<&[FeatureKind]>) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, has_header, kinds)
}

pub fn read_csv<R: Read>(reader: R, has_header: bool, kinds: Option<&[FeatureKind]>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut header: Option<Vec<String>> = None;
    let mut cells: Vec<Vec<String>> = Vec::new();
    let mut width: Option<usize> = None;
    for record in rdr.records() {
        let record = record.map_err(|e| MameError::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(MameError::Parse {
                    line,
                    message: format!("expected {w} cells, found {}", record.len()),
                })
            }
            _ => {}
        }
        if has_header && header.is_none() {
            header = Some(record.iter().map(str::to_owned).collect());
            continue;
        }
        if let Some(c) = record.iter().position(str::is_empty) {
            return Err(MameError::Parse {
                line,
                message: format!("missing value in column {c}"),
            });
        }
        cells.push(record.iter().map(str::to_owned).collect());
    }

    let p = width.ok_or_else(|| MameError::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    if cells.is_empty() {
        return Err(MameError::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    }
    if let Some(k) = kinds {
        if k.len() != p {
            return Err(MameError::invalid(format!("{} column kinds given for {p} columns", k.len())));
        }
    }

    let n = cells.len();
    let line_of = |r: usize| (r + 1 + usize::from(has_header)) as u64;
    let mut x = Array2::<f64>::zeros((n, p));
    let mut feature_kinds = Vec::with_capacity(p);
    for c in 0..p {
        let parsed: Vec<Option<f64>> = cells.iter().map(|row| row[c].parse::<f64>().ok()).collect();
        let numeric = parsed.iter().all(|v| v.is_some_and(f64::is_finite));
        let declared = kinds.map(|k| k[c]);
        let kind = match (declared, numeric) {
            (Some(FeatureKind::Continuous), false) => {
                let r = parsed.iter().position(|v| !v.is_some_and(f64::is_finite)).unwrap_or(0);
                return Err(MameError::Parse {
                    line: line_of(r),
                    message: format!("non-numeric value '{}' in continuous column {c}", cells[r][c]),
                });
            }
            (Some(kind), true) => kind,
            (_, false) => FeatureKind::Categorical,
            (None, true) => FeatureKind::Continuous,
        };
        if numeric {
            for (r, v) in parsed.iter().enumerate() {
                x[[r, c]] = v.unwrap_or_default();
            }
        } else {
            let distinct: BTreeSet<&str> = cells.iter().map(|row| row[c].as_str()).collect();
            let codes: BTreeMap<&str, usize> = distinct.into_iter().enumerate().map(|(i, s)| (s, i)).collect();
            for (r, row) in cells.iter().enumerate() {
                x[[r, c]] = codes[row[c].as_str()] as f64;
            }
        }
        feature_kinds.push(kind);
    }

    let feature_names = header.unwrap_or_else(|| (0..p).map(|j| format!("x{j}")).collect());
    let row_ids = (0..n).map(|i| i.to_string()).collect();
    Dataset::new(x, feature_names, feature_kinds, row_ids)
}

/// Writes the dataset with a header row; values use the shortest
/// representation that parses back to the identical `f64`.
pub fn save_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    write_csv(d, &mut file)?;
    file.flush()?;
    Ok(())
}

pub fn write_csv<W: Write>(d: &Dataset, out: &mut W) -> Result<()> {
    writeln!(out, "{}", d.feature_names.join(","))?;
    for row in d.x.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
}

/// Seeded shuffle split; `floor(train_frac * n)` rows go to training.
/// Both index lists are returned in ascending order.
pub fn split_dataset(d: &Dataset, train_frac: f64, seed: u64) -> Result<Split> {
    split_indices(d.n(), train_frac, seed)
}

pub fn split_indices(n: usize, train_frac: f64, seed: u64) -> Result<Split> {
    if n < 2 {
        return Err(MameError::invalid("cannot split fewer than 2 rows"));
    }
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(MameError::invalid(format!("train fraction {train_frac} not in (0, 1)")));
    }
    let n_train = (train_frac * n as f64).floor() as usize;
    if n_train < 1 || n_train >= n {
        return Err(MameError::invalid(format!(
            "train fraction {train_frac} leaves an empty partition for n = {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train_idx = order[..n_train].to_vec();
    let mut test_idx = order[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok(Split {
        train_idx,
        test_idx,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Observed codes for categorical features; `None` for continuous ones.
    pub category_values: Vec<Option<Vec<f64>>>,
}

/// Population mean/std over the rows `idx`. Constant continuous columns get std 1.
pub fn feature_stats(d: &Dataset, idx: &[usize]) -> Result<FeatureStats> {
    if idx.is_empty() {
        return Err(MameError::invalid("feature statistics need at least one row"));
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= d.n()) {
        return Err(MameError::invalid(format!("row index {bad} out of range")));
    }
    let count = idx.len() as f64;
    let mut mean = Vec::with_capacity(d.p());
    let mut std = Vec::with_capacity(d.p());
    let mut category_values = Vec::with_capacity(d.p());
    for c in 0..d.p() {
        let col = d.x.column(c);
        let mu = idx.iter().map(|&i| col[i]).sum::<f64>() / count;
        let var = idx.iter().map(|&i| (col[i] - mu).powi(2)).sum::<f64>() / count;
        let sd = var.sqrt();
        mean.push(mu);
        match d.feature_kinds[c] {
            FeatureKind::Continuous => {
                std.push(if sd > 0.0 { sd } else { 1.0 });
                category_values.push(None);
            }
            FeatureKind::Categorical => {
                std.push(if sd > 0.0 { sd } else { 1.0 });
                let mut codes: Vec<f64> = idx.iter().map(|&i| col[i]).collect();
                codes.sort_by(f64::total_cmp);
                codes.dedup();
                category_values.push(Some(codes));
            }
        }
    }
    Ok(FeatureStats {
        mean,
        std,
        category_values,
    })
}
