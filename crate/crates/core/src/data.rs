//! Dataset container, standardization, CSV ingestion and train/test
//! splitting.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, PrideError, Result};
use crate::rng::substream;

/// Which generative block a synthetic column belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockLabel {
    /// Directly observed block (confounded by C).
    X,
    /// Confounder block.
    C,
}

/// A dense design matrix with response and optional generative metadata.
#[derive(Debug, Clone)]
pub struct DataSet {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub column_names: Vec<String>,
    /// Training statistics, populated once the set has been standardized.
    pub column_means: Option<DVector<f64>>,
    pub column_stds: Option<DVector<f64>>,
    /// Generating coefficients, synthetic data only.
    pub true_beta: Option<DVector<f64>>,
    pub block_labels: Option<Vec<BlockLabel>>,
}

impl DataSet {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Self {
        let names = (0..x.ncols()).map(|j| format!("x_{j:03}")).collect();
        Self {
            x,
            y,
            column_names: names,
            column_means: None,
            column_stds: None,
            true_beta: None,
            block_labels: None,
        }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

/// Column-wise standardization to mean zero and unit variance, using the
/// population (divide by n) standard deviation. Returns the standardized
/// matrix together with the statistics so they can be reapplied to held-out
/// rows.
pub fn standardize(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>)> {
    let n = x.nrows();
    let p = x.ncols();
    if n == 0 || p == 0 {
        return Err(invalid("standardize requires a nonempty matrix"));
    }
    let mut means = DVector::zeros(p);
    let mut stds = DVector::zeros(p);
    for j in 0..p {
        let col = x.column(j);
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        if std < 1e-12 {
            return Err(invalid(format!(
                "column {j} is constant (std {std:.3e}); cannot standardize"
            )));
        }
        means[j] = mean;
        stds[j] = std;
    }
    Ok((apply_standardization(x, &means, &stds)?, means, stds))
}

/// Applies previously computed statistics, e.g. training statistics to test
/// rows.
pub fn apply_standardization(
    x: &DMatrix<f64>,
    means: &DVector<f64>,
    stds: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let p = x.ncols();
    if means.len() != p || stds.len() != p {
        return Err(invalid(format!(
            "standardization statistics have length {}/{}, expected {p}",
            means.len(),
            stds.len()
        )));
    }
    let mut out = x.clone();
    for j in 0..p {
        let (m, s) = (means[j], stds[j]);
        for i in 0..x.nrows() {
            out[(i, j)] = (out[(i, j)] - m) / s;
        }
    }
    Ok(out)
}

/// Deterministic row split into (train, test) with `n_train =
/// round(fraction * n)`, clamped so both sides are nonempty. Row order
/// within each side follows the original data.
pub fn train_test_split(data: &DataSet, fraction: f64, seed: u64) -> Result<(DataSet, DataSet)> {
    let n = data.n();
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(invalid(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    if n < 2 {
        return Err(invalid("split requires at least two rows"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut substream(seed, "train-test-split"));
    let n_train = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut train_idx = order[..n_train].to_vec();
    let mut test_idx = order[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((subset_rows(data, &train_idx), subset_rows(data, &test_idx)))
}

fn subset_rows(data: &DataSet, rows: &[usize]) -> DataSet {
    DataSet {
        x: data.x.select_rows(rows.iter()),
        y: DVector::from_iterator(rows.len(), rows.iter().map(|&i| data.y[i])),
        column_names: data.column_names.clone(),
        column_means: None,
        column_stds: None,
        true_beta: data.true_beta.clone(),
        block_labels: data.block_labels.clone(),
    }
}

/// Reads a rectangular numeric CSV with a header row; the named response
/// column becomes `y` and the remaining columns, in file order, become the
/// design matrix.
pub fn load_csv(path: &Path, response_column: &str) -> Result<DataSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| csv_error(e, 0))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(e, 0))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let response_idx = headers
        .iter()
        .position(|h| h == response_column)
        .ok_or_else(|| PrideError::Parse {
            row: 0,
            column: response_column.to_string(),
            message: format!("response column not found among {headers:?}"),
        })?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != response_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut responses: Vec<f64> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(e, r + 1))?;
        let mut features = Vec::with_capacity(headers.len() - 1);
        for (j, cell) in record.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| PrideError::Parse {
                row: r + 1,
                column: headers.get(j).cloned().unwrap_or_else(|| j.to_string()),
                message: format!("non-numeric cell {cell:?}"),
            })?;
            if !value.is_finite() {
                return Err(PrideError::Parse {
                    row: r + 1,
                    column: headers[j].clone(),
                    message: format!("non-finite cell {cell:?}"),
                });
            }
            if j == response_idx {
                responses.push(value);
            } else {
                features.push(value);
            }
        }
        rows.push(features);
    }
    if rows.is_empty() {
        return Err(PrideError::Parse {
            row: 0,
            column: String::new(),
            message: "csv has no data rows".to_string(),
        });
    }
    let n = rows.len();
    let p = rows[0].len();
    if p == 0 {
        return Err(PrideError::Parse {
            row: 0,
            column: String::new(),
            message: "csv has no feature columns".to_string(),
        });
    }
    let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    let mut out = DataSet::new(x, DVector::from_vec(responses));
    out.column_names = feature_names;
    Ok(out)
}

fn csv_error(e: csv::Error, fallback_row: usize) -> PrideError {
    let row = e
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(fallback_row);
    PrideError::Parse {
        row,
        column: String::new(),
        message: e.to_string(),
    }
}
