//! Finite-difference gradient checker shared by the gradient suites.

use super::{random_matrix, random_model, rng};
use histda::adaptation::{
    nearest_labeled_distances, sample_scores, weighted_entropy_loss, SampleWeights, WeightingConfig,
};
use histda::histogram::{histogram_loss, make_targets, HistogramSpec, TargetMode};
use histda::matrix::Matrix;
use histda::nn::{forward, Activation, Model};
use histda::train::{step_gradients, Mode, StepBatch, Weighting};
use rand::Rng;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

/// ReLU on/off pattern of every hidden unit for every row.
fn relu_pattern(model: &Model, xs: &[&Matrix]) -> Vec<bool> {
    let mut out = Vec::new();
    for x in xs {
        let (_, cache) = forward(model, x).unwrap();
        for (layer, z) in model.layers().iter().zip(cache.pre_activations()) {
            if layer.activation() == Activation::Relu {
                out.extend(z.as_slice().iter().map(|v| *v > 0.0));
            }
        }
    }
    out
}

pub struct Case {
    pub model: Model,
    pub xs: Matrix,
    pub ps: Matrix,
    pub xt: Matrix,
    pub pt: Matrix,
    pub xu: Matrix,
    pub labeled_features: Matrix,
    pub alpha: f64,
    pub beta: f64,
    pub mode: Mode,
}

pub fn build(seed: u64, mode: Mode) -> Case {
    let mut r = rng(seed);
    let d = r.random_range(2..5);
    let k = r.random_range(3..7);
    let h1 = r.random_range(3..7);
    let h2 = r.random_range(2..6);
    let model = random_model(&mut r, &[d, h1, h2, k]);
    let spec = HistogramSpec::new(0.0, 10.0, k).unwrap();
    let tm = if mode == Mode::HlDdWmme {
        TargetMode::DiracDelta
    } else {
        TargetMode::TruncatedGaussian { sigma: r.random_range(0.8..3.0) }
    };
    let ys: Vec<f64> = (0..3).map(|_| r.random_range(0.0..10.0)).collect();
    let yt: Vec<f64> = (0..2).map(|_| r.random_range(0.0..10.0)).collect();
    let xs = random_matrix(&mut r, 3, d, 1.5);
    let xt = random_matrix(&mut r, 2, d, 1.5);
    let xu = random_matrix(&mut r, 3, d, 1.5);
    let labeled = Matrix::vstack(&[&xs, &xt]).unwrap();
    Case {
        labeled_features: model.encode(&labeled).unwrap(),
        model,
        ps: make_targets(&ys, &spec, tm).unwrap(),
        pt: make_targets(&yt, &spec, tm).unwrap(),
        xs,
        xt,
        xu,
        alpha: r.random_range(0.1..2.0),
        beta: r.random_range(0.2..2.0),
        mode,
    }
}

impl Case {
    /// Sample scores at the current parameters; held fixed during probing.
    pub fn scores(&self) -> SampleWeights {
        if !self.mode.weighted() {
            return SampleWeights::ones(self.xu.rows());
        }
        let z = self.model.encode(&self.xu).unwrap();
        let d = nearest_labeled_distances(&z, &self.labeled_features).unwrap();
        sample_scores(&d, &WeightingConfig::new(self.beta).unwrap()).unwrap()
    }

    fn supervised(&self, m: &Model) -> f64 {
        let qs = forward(m, &self.xs).unwrap().0;
        let qt = forward(m, &self.xt).unwrap().0;
        histogram_loss(&self.ps, &qs).unwrap() + histogram_loss(&self.pt, &qt).unwrap()
    }

    fn unsupervised(&self, m: &Model, s: &SampleWeights) -> f64 {
        if !self.mode.uses_entropy() {
            return 0.0;
        }
        let qu = forward(m, &self.xu).unwrap().0;
        self.alpha * weighted_entropy_loss(&qu, s).unwrap()
    }

    /// Compares every analytic parameter gradient with central differences.
    /// Head parameters see the entropy part scaled by the mode's head factor.
    /// Returns the worst relative error and the number of probes skipped
    /// because a ReLU flipped.
    pub fn check(&self, h: f64) -> (f64, usize) {
        let batch = StepBatch {
            source: (&self.xs, &self.ps),
            target_labeled: Some((&self.xt, &self.pt)),
            target_unlabeled: Some(&self.xu),
        };
        let weighting = Weighting {
            labeled_features: &self.labeled_features,
            config: WeightingConfig::new(self.beta).unwrap(),
        };
        let (grads, _) = step_gradients(&self.model, &batch, self.alpha, self.mode, Some(weighting)).unwrap();
        let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
        let s = self.scores();
        let inputs = [&self.xs, &self.xt, &self.xu];
        let base = relu_pattern(&self.model, &inputs);
        let head_from = 2 * self.model.head_start();
        let mut worst: f64 = 0.0;
        let mut skipped = 0;
        for (bi, buf) in analytic.iter().enumerate() {
            for (i, &a) in buf.iter().enumerate() {
                let eval = |delta: f64| {
                    let mut m = self.model.clone();
                    m.param_slices_mut()[bi][i] += delta;
                    (self.supervised(&m), self.unsupervised(&m, &s), relu_pattern(&m, &inputs))
                };
                let (sp, up, pp) = eval(h);
                let (sm, um, pm) = eval(-h);
                if pp != base || pm != base {
                    skipped += 1;
                    continue;
                }
                let scale = if bi >= head_from { self.mode.head_grad_scale() } else { 1.0 };
                let numeric = (sp - sm) / (2.0 * h) + scale * (up - um) / (2.0 * h);
                worst = worst.max(rel_err(a, numeric));
            }
        }
        (worst, skipped)
    }
}

