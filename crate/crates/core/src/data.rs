//! Tabular dataset ingestion, per-feature statistics and train/test splitting.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing or non-numeric value at row {row}, column '{column}'")]
    MissingValue { row: usize, column: String },
    #[error("unknown column '{0}'")]
    UnknownColumn(String),
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("test fraction {0} outside (0, 1)")]
    BadFraction(f64),
    #[error("duplicate feature name '{0}'")]
    DuplicateFeature(String),
    #[error("target value {0} at row {1} is not a 0/1 class label")]
    BadLabel(f64, usize),
    #[error("inconsistent shape: {0}")]
    Shape(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Column-named numeric matrix with an optional binary target.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    feature_names: Vec<String>,
    rows: DMatrix<f64>,
    target: Option<Vec<u8>>,
}

impl TabularDataset {
    pub fn new(
        feature_names: Vec<String>,
        rows: DMatrix<f64>,
        target: Option<Vec<u8>>,
    ) -> Result<Self, DataError> {
        if rows.ncols() != feature_names.len() {
            return Err(DataError::Shape(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                rows.ncols()
            )));
        }
        let mut seen = HashSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(DataError::DuplicateFeature(name.clone()));
            }
        }
        for (idx, v) in rows.iter().enumerate() {
            if !v.is_finite() {
                let row = idx % rows.nrows();
                let col = idx / rows.nrows();
                return Err(DataError::MissingValue {
                    row,
                    column: feature_names[col].clone(),
                });
            }
        }
        if let Some(t) = &target {
            if t.len() != rows.nrows() {
                return Err(DataError::Shape(format!(
                    "target length {} for {} rows",
                    t.len(),
                    rows.nrows()
                )));
            }
            if let Some(pos) = t.iter().position(|&y| y > 1) {
                return Err(DataError::BadLabel(t[pos] as f64, pos));
            }
        }
        Ok(Self {
            feature_names,
            rows,
            target,
        })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn target(&self) -> Option<&[u8]> {
        self.target.as_deref()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.rows.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.rows.row(i).iter().copied().collect()
    }

    /// Subset of rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> TabularDataset {
        let p = self.n_features();
        let rows = DMatrix::from_fn(indices.len(), p, |i, j| self.rows[(indices[i], j)]);
        let target = self
            .target
            .as_ref()
            .map(|t| indices.iter().map(|&i| t[i]).collect());
        TabularDataset {
            feature_names: self.feature_names.clone(),
            rows,
            target,
        }
    }

    /// Writes the dataset as CSV with shortest round-trip float formatting.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P, target_column: &str) -> Result<(), DataError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = self.feature_names.clone();
        if self.target.is_some() {
            header.push(target_column.to_string());
        }
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec: Vec<String> = self.rows.row(i).iter().map(|v| format!("{v:?}")).collect();
            if let Some(t) = &self.target {
                rec.push(t[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Loads a CSV with a mandatory header row. When `target_column` is given, that
/// column is extracted as the 0/1 class label.
pub fn load_csv<P: AsRef<Path>>(
    path: P,
    target_column: Option<&str>,
) -> Result<TabularDataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let target_idx = match target_column {
        Some(name) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| DataError::UnknownColumn(name.to_string()))?,
        ),
        None => None,
    };
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != target_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut values = Vec::new();
    let mut target = Vec::new();
    let mut n = 0usize;
    for record in reader.records() {
        let record = record?;
        for (j, cell) in record.iter().enumerate() {
            let parsed = cell.parse::<f64>().ok().filter(|v| v.is_finite());
            let Some(v) = parsed else {
                return Err(DataError::MissingValue {
                    row: n,
                    column: header[j].clone(),
                });
            };
            if Some(j) == target_idx {
                if v != 0.0 && v != 1.0 {
                    return Err(DataError::BadLabel(v, n));
                }
                target.push(v as u8);
            } else {
                values.push(v);
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(DataError::EmptyDataset);
    }
    let rows = DMatrix::from_row_slice(n, feature_names.len(), &values);
    TabularDataset::new(feature_names, rows, target_idx.map(|_| target))
}

/// Per-feature means and population standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub means: Vec<f64>,
    pub stdevs: Vec<f64>,
    pub constant: Vec<bool>,
}

impl FeatureStats {
    pub fn width(&self) -> usize {
        self.means.len()
    }

    /// `(x - mean) / std`, with constant features mapped to 0.
    pub fn standardize(&self, j: usize, x: f64) -> f64 {
        if self.constant[j] {
            0.0
        } else {
            (x - self.means[j]) / self.stdevs[j]
        }
    }
}

pub fn compute_stats(d: &TabularDataset) -> Result<FeatureStats, DataError> {
    stats_of(d.rows())
}

pub(crate) fn stats_of(rows: &DMatrix<f64>) -> Result<FeatureStats, DataError> {
    let n = rows.nrows();
    if n < 2 {
        return Err(DataError::TooFewRows { needed: 2, got: n });
    }
    let mut means = Vec::with_capacity(rows.ncols());
    let mut stdevs = Vec::with_capacity(rows.ncols());
    let mut constant = Vec::with_capacity(rows.ncols());
    for col in rows.column_iter() {
        let first = col[0];
        let is_const = col.iter().all(|&v| v == first);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        means.push(if is_const { first } else { mean });
        stdevs.push(if is_const { 0.0 } else { var.sqrt() });
        constant.push(is_const);
    }
    Ok(FeatureStats {
        means,
        stdevs,
        constant,
    })
}

/// Deterministic train/test partition, stratified by class when a target exists.
/// Rows keep their original relative order within each part.
///
/// The training set receives `floor(n * (1 - test_fraction))` rows.
pub fn split(
    d: &TabularDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(TabularDataset, TabularDataset), DataError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::BadFraction(test_fraction));
    }
    let n = d.n_rows();
    if n < 2 {
        return Err(DataError::TooFewRows { needed: 2, got: n });
    }
    let n_train = ((n as f64) * (1.0 - test_fraction) + 1e-9).floor() as usize;
    let n_train = n_train.clamp(1, n - 1);
    let n_test = n - n_train;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (mut train_idx, mut test_idx) = match d.target() {
        None => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let test = idx.split_off(n_train);
            (idx, test)
        }
        Some(target) => {
            let mut groups: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
            for (i, &y) in target.iter().enumerate() {
                groups[y as usize].push(i);
            }
            for g in groups.iter_mut() {
                g.shuffle(&mut rng);
            }
            // Largest-remainder allocation of the test quota across classes.
            let exact: Vec<f64> = groups
                .iter()
                .map(|g| g.len() as f64 * n_test as f64 / n as f64)
                .collect();
            let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
            let mut remaining = n_test - quota.iter().sum::<usize>();
            let mut order: Vec<usize> = vec![0, 1];
            order.sort_by(|&a, &b| {
                let ra = exact[a] - exact[a].floor();
                let rb = exact[b] - exact[b].floor();
                rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
            });
            for &c in order.iter().cycle().take(4) {
                if remaining == 0 {
                    break;
                }
                if quota[c] < groups[c].len() {
                    quota[c] += 1;
                    remaining -= 1;
                }
            }
            let mut train = Vec::with_capacity(n_train);
            let mut test = Vec::with_capacity(n_test);
            for (c, g) in groups.iter().enumerate() {
                test.extend_from_slice(&g[..quota[c]]);
                train.extend_from_slice(&g[quota[c]..]);
            }
            (train, test)
        }
    };
    // Both parts keep the original row order, so test row k is the k-th held-out
    // row of the file.
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((d.select_rows(&train_idx), d.select_rows(&test_idx)))
}
