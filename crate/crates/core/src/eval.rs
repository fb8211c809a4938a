//! Regression metrics and plot-ready series.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub r2: f64,
    /// R² in percent, the convention of calibration result tables.
    pub r2_x100: f64,
    pub mae: f64,
    /// Population standard deviation of the absolute errors.
    pub mae_std: f64,
    pub n: usize,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "R2 {:.1}  MAE {:.2} ({:.2})  n={}",
            self.r2_x100, self.mae, self.mae_std, self.n
        )
    }
}

fn check_pair(y_true: &[f64], y_pred: &[f64]) -> Result<()> {
    if y_true.len() != y_pred.len() {
        return dim_err(format!("{} targets vs {} predictions", y_true.len(), y_pred.len()));
    }
    if y_true.iter().chain(y_pred).any(|v| !v.is_finite()) {
        return Err(Error::Domain("metric inputs must be finite".into()));
    }
    Ok(())
}

pub fn metrics(y_true: &[f64], y_pred: &[f64]) -> Result<EvalReport> {
    check_pair(y_true, y_pred)?;
    let n = y_true.len();
    if n < 2 {
        return Err(Error::Domain(format!("metrics need at least 2 samples, got {n}")));
    }
    let nf = n as f64;
    let mean = y_true.iter().sum::<f64>() / nf;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean) * (y - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Domain("R² is undefined for a constant target".into()));
    }
    let mut ss_res = 0.0;
    let mut abs_sum = 0.0;
    for (t, p) in y_true.iter().zip(y_pred) {
        let e = t - p;
        ss_res += e * e;
        abs_sum += e.abs();
    }
    let mae = abs_sum / nf;
    let var = y_true
        .iter()
        .zip(y_pred)
        .map(|(t, p)| {
            let d = (t - p).abs() - mae;
            d * d
        })
        .sum::<f64>()
        / nf;
    let r2 = 1.0 - ss_res / ss_tot;
    Ok(EvalReport { r2, r2_x100: 100.0 * r2, mae, mae_std: var.sqrt(), n })
}

/// Running sum of absolute errors.
pub fn cumulative_abs_error(y_true: &[f64], y_pred: &[f64]) -> Result<Vec<f64>> {
    check_pair(y_true, y_pred)?;
    let mut acc = 0.0;
    Ok(y_true
        .iter()
        .zip(y_pred)
        .map(|(t, p)| {
            acc += (t - p).abs();
            acc
        })
        .collect())
}

pub const SERIES_HEADER: &str = "timestamp,reference,uncalibrated,calibrated";

/// Writes aligned reference, raw and calibrated series as CSV.
pub fn export_series(
    timestamps: &[String],
    y_ref: &[f64],
    y_uncal: &[f64],
    y_cal: &[f64],
    path: &Path,
) -> Result<()> {
    let n = timestamps.len();
    if y_ref.len() != n || y_uncal.len() != n || y_cal.len() != n {
        return dim_err("series lengths differ");
    }
    if y_ref.iter().chain(y_uncal).chain(y_cal).any(|v| !v.is_finite()) {
        return Err(Error::Domain("series contain non-finite values".into()));
    }
    let mut out = String::with_capacity(32 * (n + 1));
    out.push_str(SERIES_HEADER);
    out.push('\n');
    for i in 0..n {
        out.push_str(&format!("{},{},{},{}\n", timestamps[i], y_ref[i], y_uncal[i], y_cal[i]));
    }
    std::fs::File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

/// Writes `timestamp,cumulative_abs_error`.
pub fn export_cumulative(timestamps: &[String], cum: &[f64], path: &Path) -> Result<()> {
    if timestamps.len() != cum.len() {
        return dim_err("series lengths differ");
    }
    let mut out = String::from("timestamp,cumulative_abs_error\n");
    for (t, c) in timestamps.iter().zip(cum) {
        out.push_str(&format!("{t},{c}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}
