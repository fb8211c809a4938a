//! Synthetic source/target domains with covariate shift and a label gap.
//!
//! Inputs are Gaussian; the target domain's mean is displaced from the
//! source's and its spread may differ. Labels come from one fixed random
//! function shared by both domains, squashed into the label support. The
//! labeled target pool never contains samples whose true label falls inside
//! the gap interval; the unlabeled, validation and test pools are drawn from
//! the unconditioned target distribution.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, SplitBundle};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{stream, Consumer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionFamily {
    /// Sigmoid of a linear projection.
    Linear,
    /// Sigmoid of a linear projection plus a random one-hidden-layer tanh network.
    RandomMlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticCounts {
    pub source_train: usize,
    pub source_val: usize,
    pub source_test: usize,
    pub target_labeled: usize,
    pub target_unlabeled: usize,
    pub target_val: usize,
    pub target_test: usize,
}

impl Default for SyntheticCounts {
    fn default() -> Self {
        Self {
            source_train: 2000,
            source_val: 300,
            source_test: 300,
            target_labeled: 48,
            target_unlabeled: 1500,
            target_val: 300,
            target_test: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub function: FunctionFamily,
    /// Hidden width of the random network in [`FunctionFamily::RandomMlp`].
    pub hidden: usize,
    /// Weight of the nonlinear part relative to the linear projection.
    pub nonlinearity: f64,
    /// Label support `[lo, hi]`.
    pub support: [f64; 2],
    pub source_std: f64,
    /// Distance between the source and target input means.
    pub target_shift: f64,
    /// Cosine between the mean shift and the label-increasing direction.
    pub shift_alignment: f64,
    pub target_std: f64,
    /// Labels in this interval are withheld from the labeled target pool.
    pub label_gap: Option<[f64; 2]>,
    pub counts: SyntheticCounts,
    /// Standard deviation of additive label noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            function: FunctionFamily::RandomMlp,
            hidden: 16,
            nonlinearity: 1.0,
            support: [0.0, 100.0],
            source_std: 1.0,
            target_shift: 1.5,
            shift_alignment: 0.7,
            target_std: 1.0,
            label_gap: Some([50.0, 75.0]),
            counts: SyntheticCounts::default(),
            noise: 2.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synthetic config: {m}")));
        let [lo, hi] = self.support;
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if !(hi > lo) {
            return bad(format!("empty support [{lo}, {hi}]"));
        }
        if self.function == FunctionFamily::RandomMlp && self.hidden == 0 {
            return bad("hidden width must be positive".into());
        }
        if !(self.source_std > 0.0 && self.target_std > 0.0) {
            return bad("input spreads must be positive".into());
        }
        if !(self.noise >= 0.0) || !self.target_shift.is_finite() || !self.nonlinearity.is_finite() {
            return bad("noise, shift and nonlinearity must be finite, noise nonnegative".into());
        }
        if !(-1.0..=1.0).contains(&self.shift_alignment) {
            return bad("shift alignment must lie in [-1, 1]".into());
        }
        if let Some([a, b]) = self.label_gap {
            if !(a < b && a >= lo && b <= hi) {
                return bad(format!("label gap [{a}, {b}] must be a nonempty interval inside the support"));
            }
        }
        let c = &self.counts;
        if [c.source_train, c.source_val, c.source_test, c.target_labeled, c.target_unlabeled, c.target_val, c.target_test]
            .contains(&0)
        {
            return bad("all counts must be positive".into());
        }
        Ok(())
    }

    pub fn in_gap(&self, y: f64) -> bool {
        self.label_gap.is_some_and(|[a, b]| y >= a && y <= b)
    }
}

/// The noise-free labeling function, rebuilt deterministically from a config.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOracle {
    support: [f64; 2],
    direction: Vec<f64>,
    nonlinearity: f64,
    /// hidden x dim
    w: Option<Matrix>,
    b: Vec<f64>,
    v: Vec<f64>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|a| a / n).collect();
        }
    }
}

impl SyntheticOracle {
    pub fn from_config(cfg: &SyntheticConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream(cfg.seed, Consumer::SyntheticOracle);
        let direction = unit(&mut rng, cfg.dim);
        let (w, b, v) = match cfg.function {
            FunctionFamily::Linear => (None, vec![], vec![]),
            FunctionFamily::RandomMlp => {
                let h = cfg.hidden;
                let scale = 1.0 / (cfg.dim as f64).sqrt();
                let w = Matrix::from_vec(h, cfg.dim, (0..h * cfg.dim).map(|_| normal(&mut rng) * scale).collect())?;
                let b = (0..h).map(|_| rng.random_range(-1.0..1.0)).collect();
                let v = (0..h).map(|_| normal(&mut rng) / (h as f64).sqrt()).collect();
                (Some(w), b, v)
            }
        };
        Ok(Self { support: cfg.support, direction, nonlinearity: cfg.nonlinearity, w, b, v })
    }

    /// Unit direction along which the label increases linearly.
    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    fn latent(&self, x: &[f64]) -> f64 {
        let mut g: f64 = self.direction.iter().zip(x).map(|(a, b)| a * b).sum();
        if let Some(w) = &self.w {
            let mut nl = 0.0;
            for (k, row) in w.row_iter().enumerate() {
                let z: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.b[k];
                nl += self.v[k] * z.tanh();
            }
            g += self.nonlinearity * 2.0 * nl;
        }
        g
    }

    fn squash(&self, g: f64) -> f64 {
        let [lo, hi] = self.support;
        lo + (hi - lo) / (1.0 + (-g).exp())
    }

    /// True label for one input row.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.squash(self.latent(x))
    }

    /// A raw-reading proxy: the squashed linear response alone, ignoring the
    /// cross-sensitivities captured by the nonlinear part.
    pub fn uncalibrated(&self, x: &[f64]) -> f64 {
        self.squash(self.direction.iter().zip(x).map(|(a, b)| a * b).sum())
    }

    pub fn eval_rows(&self, x: &Matrix) -> Vec<f64> {
        x.row_iter().map(|r| self.eval(r)).collect()
    }
}

struct Domain {
    mean: Vec<f64>,
    std: f64,
}

impl Domain {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.mean.iter().map(|m| m + self.std * normal(rng)).collect()
    }
}

const HOUR: i64 = 3600;
/// 2021-01-01T00:00:00Z
const EPOCH: i64 = 1_609_459_200;

/// Generates a [`SplitBundle`] and the oracle that labeled it.
pub fn synth_domains(cfg: &SyntheticConfig) -> Result<(SplitBundle, SyntheticOracle)> {
    let oracle = SyntheticOracle::from_config(cfg)?;
    let mut rng = stream(cfg.seed, Consumer::SyntheticSamples);
    let d = cfg.dim;
    let source = Domain { mean: vec![0.0; d], std: cfg.source_std };
    // mean shift: `shift_alignment` of it along the label direction, the rest orthogonal
    let ortho = {
        let mut u = unit(&mut rng, d);
        let dot: f64 = u.iter().zip(&oracle.direction).map(|(a, b)| a * b).sum();
        u.iter_mut().zip(&oracle.direction).for_each(|(a, b)| *a -= dot * b);
        let n = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-9 {
            u.iter_mut().for_each(|a| *a /= n);
        }
        u
    };
    let a = cfg.shift_alignment;
    let s = (1.0 - a * a).max(0.0).sqrt();
    let target = Domain {
        mean: (0..d).map(|i| cfg.target_shift * (a * oracle.direction[i] + s * ortho[i])).collect(),
        std: cfg.target_std,
    };

    let names: Vec<String> = (1..=d).map(|i| format!("f{i}")).collect();
    let [lo, hi] = cfg.support;
    let label = |r: &[f64], rng: &mut ChaCha8Rng| (oracle.eval(r) + cfg.noise * normal(rng)).clamp(lo, hi);
    let make = |rows: Vec<Vec<f64>>, y: Option<Vec<f64>>, clock: &mut i64| -> Result<FeatureMatrix> {
        let x = Matrix::from_rows(&rows)?;
        let n = x.rows();
        let ts = (0..n as i64).map(|i| *clock + i * HOUR).collect();
        *clock += n as i64 * HOUR;
        let mut m = FeatureMatrix::new(names.clone(), ts, x, y)?;
        m.uncalibrated = Some(rows.iter().map(|r| oracle.uncalibrated(r)).collect());
        Ok(m)
    };

    let c = &cfg.counts;
    let draw = |dom: &Domain, n: usize, labeled: bool, rng: &mut ChaCha8Rng| {
        let rows: Vec<Vec<f64>> = (0..n).map(|_| dom.draw(rng)).collect();
        let y = labeled.then(|| rows.iter().map(|r| label(r, rng)).collect());
        (rows, y)
    };

    let mut clock = EPOCH;
    let (rows, y) = draw(&source, c.source_train, true, &mut rng);
    let source_train = make(rows, y, &mut clock)?;
    let (rows, y) = draw(&source, c.source_val, true, &mut rng);
    let source_val = make(rows, y, &mut clock)?;
    let (rows, y) = draw(&source, c.source_test, true, &mut rng);
    let source_test = make(rows, y, &mut clock)?;

    // Neither the clean nor the noisy label of a labeled target row may fall in the gap.
    clock = EPOCH;
    let mut labeled_rows = Vec::with_capacity(c.target_labeled);
    let mut labels = Vec::with_capacity(c.target_labeled);
    let budget = 1000 * c.target_labeled;
    let mut tries = 0;
    while labeled_rows.len() < c.target_labeled {
        if tries == budget {
            return Err(Error::Config(
                "label gap leaves too little target mass to fill the labeled pool".into(),
            ));
        }
        tries += 1;
        let x = target.draw(&mut rng);
        let y = label(&x, &mut rng);
        if !cfg.in_gap(oracle.eval(&x)) && !cfg.in_gap(y) {
            labeled_rows.push(x);
            labels.push(y);
        }
    }
    let target_labeled = make(labeled_rows, Some(labels), &mut clock)?;
    let (rows, _) = draw(&target, c.target_unlabeled, false, &mut rng);
    let target_unlabeled = make(rows, None, &mut clock)?;
    let (rows, y) = draw(&target, c.target_val, true, &mut rng);
    let target_val = make(rows, y, &mut clock)?;
    let (rows, y) = draw(&target, c.target_test, true, &mut rng);
    let target_test = make(rows, y, &mut clock)?;

    let bundle = SplitBundle {
        source_train,
        source_val,
        source_test,
        target_labeled,
        target_unlabeled,
        target_val,
        target_test,
    };
    bundle.validate()?;
    Ok((bundle, oracle))
}
