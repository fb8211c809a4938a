use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::matrix::Matrix;

/// Smallest standard deviation a scaler divides by.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-feature standardisation `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StandardScaler {
    /// Fits population mean and standard deviation over the rows of all parts.
    pub fn fit(parts: &[&Matrix]) -> Result<Self> {
        let d = parts.first().map_or(0, |m| m.cols());
        if parts.iter().any(|m| m.cols() != d) {
            return dim_err("scaler inputs have different widths");
        }
        let n: usize = parts.iter().map(|m| m.rows()).sum();
        if n < 2 {
            return Err(Error::Config(format!("scaler needs at least 2 rows, got {n}")));
        }
        let mut mean = vec![0.0; d];
        for m in parts {
            for r in m.row_iter() {
                for (a, v) in mean.iter_mut().zip(r) {
                    *a += v;
                }
            }
        }
        mean.iter_mut().for_each(|v| *v /= n as f64);
        let mut var = vec![0.0; d];
        for m in parts {
            for r in m.row_iter() {
                for ((a, v), mu) in var.iter_mut().zip(r).zip(&mean) {
                    *a += (v - mu) * (v - mu);
                }
            }
        }
        let std = var.iter().map(|v| (v / n as f64).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.dim() {
            return dim_err(format!("scaler fitted on {} features, got {}", self.dim(), x.cols()));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for ((v, mu), sd) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - mu) / sd;
            }
        }
        Ok(out)
    }
}
