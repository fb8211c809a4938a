//! Binned label distributions.
//!
//! A continuous label is turned into a distribution over `K` equal-width bins
//! spanning the label support. The network is trained with cross-entropy
//! against that distribution and predicts the expectation of its output
//! histogram over the bin centers.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::matrix::Matrix;

/// Probabilities are clamped to this floor before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

static OUT_OF_SUPPORT: AtomicU64 = AtomicU64::new(0);

/// Number of labels clamped into the support by [`make_target`] since start-up.
pub fn out_of_support_count() -> u64 {
    OUT_OF_SUPPORT.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    lo: f64,
    hi: f64,
    bins: usize,
}

impl HistogramSpec {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
            return Err(Error::Config(format!("histogram support [{lo}, {hi}] is empty")));
        }
        if bins < 2 {
            return Err(Error::Config(format!("histogram needs at least 2 bins, got {bins}")));
        }
        Ok(Self { lo, hi, bins })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    pub fn center(&self, k: usize) -> f64 {
        self.lo + (k as f64 + 0.5) * self.width()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.bins).map(|k| self.center(k)).collect()
    }

    /// Left edge of bin `k`; `edge(bins)` is the upper support bound.
    pub fn edge(&self, k: usize) -> f64 {
        if k == self.bins {
            self.hi
        } else {
            self.lo + k as f64 * self.width()
        }
    }

    /// Index of the bin holding `y`, after clamping into the support.
    pub fn bin_of(&self, y: f64) -> usize {
        let y = y.clamp(self.lo, self.hi);
        (((y - self.lo) / self.width()).floor() as usize).min(self.bins - 1)
    }
}

/// Shape of the per-sample target distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetMode {
    /// Gaussian centred on the label, truncated to the support.
    TruncatedGaussian { sigma: f64 },
    /// All mass on the bin containing the label.
    DiracDelta,
}

impl TargetMode {
    /// Gaussian with standard deviation equal to the square root of the bin width.
    pub fn sqrt_width_gaussian(spec: &HistogramSpec) -> Self {
        TargetMode::TruncatedGaussian { sigma: spec.width().sqrt() }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TargetMode::TruncatedGaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::Config(format!("gaussian target needs sigma > 0, got {sigma}")))
            }
            _ => Ok(()),
        }
    }
}

/// A distribution over histogram bins.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Domain("probabilities must be finite and nonnegative".into()));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("probabilities sum to {s}")));
        }
        Ok(Self(p))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Standard normal upper tail, accurate far into both tails.
fn upper_tail(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// Probability that a standard normal falls in `[a, b]`.
fn normal_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        upper_tail(a) - upper_tail(b)
    } else if b <= 0.0 {
        upper_tail(-b) - upper_tail(-a)
    } else {
        1.0 - upper_tail(-a) - upper_tail(b)
    }
}

/// Discretises `y` into a distribution over the bins of `spec`.
///
/// Labels outside the support are clamped to it and counted by
/// [`out_of_support_count`].
pub fn make_target(y: f64, spec: &HistogramSpec, mode: TargetMode) -> Result<ProbVector> {
    mode.validate()?;
    if !y.is_finite() {
        return Err(Error::Domain(format!("label {y} is not finite")));
    }
    if y < spec.lo || y > spec.hi {
        OUT_OF_SUPPORT.fetch_add(1, Ordering::Relaxed);
    }
    let y = y.clamp(spec.lo, spec.hi);
    let k = spec.bins;
    let mut p = vec![0.0; k];
    match mode {
        TargetMode::DiracDelta => p[spec.bin_of(y)] = 1.0,
        TargetMode::TruncatedGaussian { sigma } => {
            for (i, pi) in p.iter_mut().enumerate() {
                let a = (spec.edge(i) - y) / sigma;
                let b = (spec.edge(i + 1) - y) / sigma;
                *pi = normal_mass(a, b).max(0.0);
            }
            let total: f64 = p.iter().sum();
            if !(total > 0.0) {
                // sigma so small relative to the bins that every mass underflowed
                p.iter_mut().for_each(|v| *v = 0.0);
                p[spec.bin_of(y)] = 1.0;
            } else {
                p.iter_mut().for_each(|v| *v /= total);
            }
        }
    }
    Ok(ProbVector(p))
}

/// Targets for a batch of labels, one row per label.
pub fn make_targets(ys: &[f64], spec: &HistogramSpec, mode: TargetMode) -> Result<Matrix> {
    let mut out = Matrix::zeros(ys.len(), spec.bins);
    for (j, &y) in ys.iter().enumerate() {
        out.row_mut(j).copy_from_slice(make_target(y, spec, mode)?.as_slice());
    }
    Ok(out)
}

#[inline]
fn clamped_ln(q: f64) -> f64 {
    q.max(PROB_FLOOR).ln()
}

/// Mean cross-entropy `-(1/M) Σ_j Σ_k P[j,k] ln Q[j,k]`.
pub fn histogram_loss(p: &Matrix, q: &Matrix) -> Result<f64> {
    if p.shape() != q.shape() {
        return dim_err(format!("targets {:?} vs predictions {:?}", p.shape(), q.shape()));
    }
    if p.rows() == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (pr, qr) in p.row_iter().zip(q.row_iter()) {
        let mut row = 0.0;
        for (&pk, &qk) in pr.iter().zip(qr) {
            row += pk * clamped_ln(qk);
        }
        total += row;
    }
    Ok(-total / p.rows() as f64)
}

/// Gradient of [`histogram_loss`] with respect to `q`.
pub fn histogram_loss_grad(p: &Matrix, q: &Matrix) -> Result<Matrix> {
    if p.shape() != q.shape() {
        return dim_err(format!("targets {:?} vs predictions {:?}", p.shape(), q.shape()));
    }
    let m = p.rows().max(1) as f64;
    let mut g = Matrix::zeros(p.rows(), p.cols());
    for ((gv, &pk), &qk) in g.as_mut_slice().iter_mut().zip(p.as_slice()).zip(q.as_slice()) {
        *gv = if qk > PROB_FLOOR { -pk / (m * qk) } else { 0.0 };
    }
    Ok(g)
}

/// Per-row entropy `-Σ_k Q[j,k] ln Q[j,k]`.
pub fn entropy_rows(q: &Matrix) -> Vec<f64> {
    q.row_iter()
        .map(|r| {
            let mut h = 0.0;
            for &qk in r {
                h += qk * clamped_ln(qk);
            }
            -h
        })
        .collect()
}

/// Derivative of a row's entropy with respect to each entry.
pub(crate) fn entropy_partial(qk: f64) -> f64 {
    if qk > PROB_FLOOR {
        -(qk.ln() + 1.0)
    } else {
        -clamped_ln(qk)
    }
}

/// Point estimate `Σ_k q[k] · center[k]`.
pub fn expectation(q: &[f64], spec: &HistogramSpec) -> f64 {
    let w = spec.width();
    q.iter().enumerate().map(|(k, &qk)| qk * (spec.lo + (k as f64 + 0.5) * w)).sum()
}

/// Point estimate for each row of `q`.
pub fn expectation_rows(q: &Matrix, spec: &HistogramSpec) -> Result<Vec<f64>> {
    if q.cols() != spec.bins {
        return dim_err(format!("{} columns for a {}-bin histogram", q.cols(), spec.bins));
    }
    Ok(q.row_iter().map(|r| expectation(r, spec)).collect())
}
