//! Weighted entropy on unlabeled target data.
//!
//! Each unlabeled sample is scored by how close its encoding lies to the
//! nearest labeled encoding, `S = exp(-beta * d)`, so samples whose labels are
//! likely absent from the labeled pools contribute less to the entropy game.
//! The weight of the whole term ramps up over training via [`AlphaSchedule`].

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::histogram::{entropy_partial, entropy_rows};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightingConfig {
    pub beta: f64,
}

impl WeightingConfig {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {beta}")));
        }
        Ok(Self { beta })
    }
}

/// Piecewise-linear ramp of the entropy weight over epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaSchedule {
    pub t1: usize,
    pub t2: usize,
    pub alpha_inf: f64,
}

impl AlphaSchedule {
    pub fn new(t1: usize, t2: usize, alpha_inf: f64) -> Result<Self> {
        if t1 >= t2 {
            return Err(Error::Config(format!("schedule needs t1 < t2, got {t1} and {t2}")));
        }
        if !(alpha_inf > 0.0 && alpha_inf.is_finite()) {
            return Err(Error::Config(format!("alpha_inf must be positive, got {alpha_inf}")));
        }
        Ok(Self { t1, t2, alpha_inf })
    }
}

/// `0` up to `t1`, linear to `alpha_inf` at `t2`, then flat.
pub fn alpha_at(t: usize, sched: &AlphaSchedule) -> f64 {
    if t <= sched.t1 {
        0.0
    } else if t <= sched.t2 {
        sched.alpha_inf * (t - sched.t1) as f64 / (sched.t2 - sched.t1) as f64
    } else {
        sched.alpha_inf
    }
}

/// Per-sample scores in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWeights(Vec<f64>);

impl SampleWeights {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if let Some(v) = scores.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(Error::Domain(format!("scores must lie in (0, 1], got {v}")));
        }
        Ok(Self(scores))
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Euclidean distance from each unlabeled row to its nearest labeled row.
pub fn nearest_labeled_distances(unlabeled: &Matrix, labeled: &Matrix) -> Result<Vec<f64>> {
    if labeled.rows() == 0 {
        return Err(Error::Config("no labeled encodings to measure distance against".into()));
    }
    if unlabeled.cols() != labeled.cols() {
        return dim_err(format!(
            "unlabeled features have {} columns, labeled {}",
            unlabeled.cols(),
            labeled.cols()
        ));
    }
    Ok(unlabeled
        .row_iter()
        .map(|u| {
            let mut best = f64::INFINITY;
            for l in labeled.row_iter() {
                let mut s = 0.0;
                for (a, b) in u.iter().zip(l) {
                    let d = a - b;
                    s += d * d;
                    if s >= best {
                        break;
                    }
                }
                if s < best {
                    best = s;
                }
            }
            best.sqrt()
        })
        .collect())
}

pub fn sample_scores(distances: &[f64], cfg: &WeightingConfig) -> Result<SampleWeights> {
    distances
        .iter()
        .map(|&d| {
            if d >= 0.0 {
                Ok((-cfg.beta * d).exp())
            } else {
                Err(Error::Domain(format!("distance {d} is negative")))
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(SampleWeights)
}

fn check_rows(q: &Matrix, s: &SampleWeights) -> Result<()> {
    if q.rows() != s.len() {
        return dim_err(format!("{} prediction rows but {} scores", q.rows(), s.len()));
    }
    Ok(())
}

/// Mean of score-weighted row entropies, normalised by the row count.
pub fn weighted_entropy_loss(q: &Matrix, s: &SampleWeights) -> Result<f64> {
    check_rows(q, s)?;
    if q.rows() == 0 {
        return Ok(0.0);
    }
    let h = entropy_rows(q);
    let mut total = 0.0;
    for (sj, hj) in s.0.iter().zip(&h) {
        total += sj * hj;
    }
    Ok(total / q.rows() as f64)
}

/// Gradient of [`weighted_entropy_loss`] with respect to `q`, scores held fixed.
pub fn weighted_entropy_grad(q: &Matrix, s: &SampleWeights) -> Result<Matrix> {
    check_rows(q, s)?;
    let m = q.rows().max(1) as f64;
    let mut g = Matrix::zeros(q.rows(), q.cols());
    for j in 0..q.rows() {
        let w = s.0[j] / m;
        for (gk, &qk) in g.row_mut(j).iter_mut().zip(q.row(j)) {
            *gk = w * entropy_partial(qk);
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_cases() {
        let s = AlphaSchedule::new(15, 80, 1.0).unwrap();
        assert_eq!(alpha_at(0, &s), 0.0);
        assert_eq!(alpha_at(15, &s), 0.0);
        assert!((alpha_at(48, &s) - 33.0 / 65.0).abs() < 1e-15);
        assert_eq!(alpha_at(80, &s), 1.0);
        assert_eq!(alpha_at(81, &s), 1.0);
        let half = AlphaSchedule::new(15, 80, 0.1).unwrap();
        assert!((alpha_at(80, &half) - 0.1).abs() < 1e-15);
        assert_eq!(alpha_at(500, &half), 0.1);
        assert!(AlphaSchedule::new(5, 5, 1.0).is_err());
        assert!(AlphaSchedule::new(1, 5, 0.0).is_err());
    }

    #[test]
    fn distances_simple() {
        let labeled = Matrix::from_rows(&[vec![0.0, 0.0], vec![10.0, 0.0]]).unwrap();
        let unl = Matrix::from_rows(&[vec![3.0, 4.0], vec![10.0, 0.0]]).unwrap();
        assert_eq!(nearest_labeled_distances(&unl, &labeled).unwrap(), vec![5.0, 0.0]);
        assert!(nearest_labeled_distances(&unl, &Matrix::zeros(0, 2)).is_err());
        assert!(nearest_labeled_distances(&unl, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn scores_closed_forms() {
        let cfg = WeightingConfig::new(1.0).unwrap();
        let s = sample_scores(&[0.0, std::f64::consts::LN_2], &cfg).unwrap();
        assert_eq!(s.as_slice()[0], 1.0);
        assert!((s.as_slice()[1] - 0.5).abs() < 1e-15);
        assert!(sample_scores(&[-1e-3], &cfg).is_err());
        assert!(WeightingConfig::new(0.0).is_err());
    }

    #[test]
    fn unit_scores_reduce_to_mean_entropy() {
        let q = Matrix::from_rows(&[vec![0.7, 0.1, 0.1, 0.1], vec![0.25; 4], vec![0.4, 0.3, 0.2, 0.1]])
            .unwrap();
        let h = entropy_rows(&q);
        let mean = h.iter().sum::<f64>() / 3.0;
        assert_eq!(weighted_entropy_loss(&q, &SampleWeights::ones(3)).unwrap(), mean);
        assert!(weighted_entropy_loss(&q, &SampleWeights::ones(2)).is_err());
    }

    #[test]
    fn vanishing_scores_vanish() {
        let q = Matrix::filled(2, 5, 0.2);
        let s = sample_scores(&[1e3, 1e3], &WeightingConfig::new(1.0).unwrap()).unwrap();
        assert!(weighted_entropy_loss(&q, &s).unwrap() < 1e-300);
    }
}
