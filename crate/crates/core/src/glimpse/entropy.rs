use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::model::AttentionCapture;
use crate::scalar::Scalar;

/// Per-patch attention entropy in nats over the patch grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyMap {
    pub rows: usize,
    pub cols: usize,
    /// Row-major values.
    pub values: Vec<f64>,
}

impl EntropyMap {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(contract(format!("{} values for a {rows}x{cols} map", values.len())));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Row sums further than this from 1 mean the capture is corrupt.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

/// Shannon entropy `−Σ p ln p` with `0 ln 0 = 0`.
pub fn shannon_entropy<T: Scalar>(row: &[T]) -> f64 {
    -row.iter()
        .map(|p| p.as_f64())
        .filter(|&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// Sums, over heads, the entropy of each patch token's attention row; the
/// CLS row is dropped and known patches are set to exactly zero.
pub fn entropy_map<T: Scalar>(
    capture: &AttentionCapture<T>,
    known: &[bool],
    rows: usize,
    cols: usize,
) -> Result<EntropyMap> {
    let n = rows * cols;
    if capture.seq_len() != n + 1 || known.len() != n {
        return Err(contract(format!(
            "capture of {} tokens and mask of {} for a {rows}x{cols} grid",
            capture.seq_len(),
            known.len()
        )));
    }
    let mut values = vec![0.0; n];
    for h in 0..capture.heads() {
        for (i, v) in values.iter_mut().enumerate() {
            let row = capture.row(h, i + 1);
            let s: f64 = row.iter().map(|p| p.as_f64()).sum();
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE || row.iter().any(|p| p.as_f64() < 0.0) {
                return Err(Error::Consistency(format!(
                    "attention row {} of head {h} sums to {s}",
                    i + 1
                )));
            }
            *v += shannon_entropy(row);
        }
    }
    for (v, &k) in values.iter_mut().zip(known) {
        if k {
            *v = 0.0;
        }
    }
    EntropyMap::new(rows, cols, values)
}
