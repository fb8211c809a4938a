//! Training protocol.
//!
//! Every step draws one mini-batch from each of the three streams (labeled
//! source, labeled target, unlabeled target) and applies a single combined
//! update: histogram loss on both labeled batches plus `alpha(t)` times the
//! (optionally weighted) entropy of the unlabeled predictions. In the
//! min-max modes the entropy gradient reaching the head is negated, so the
//! head ascends the entropy while the encoder descends it.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptation::{
    alpha_at, nearest_labeled_distances, sample_scores, weighted_entropy_grad, weighted_entropy_loss,
    AlphaSchedule, SampleWeights, WeightingConfig,
};
use crate::data::{SplitBundle, StandardScaler};
use crate::error::{Error, Result};
use crate::eval::{metrics, EvalReport};
use crate::histogram::{
    expectation_rows, histogram_loss, histogram_loss_grad, make_targets, HistogramSpec, TargetMode,
};
use crate::matrix::Matrix;
use crate::nn::{
    adam_step, backward, forward, init_model, read_model, write_model, AdamConfig, AdamState,
    Gradients, Model,
};
use crate::rng::{stream, Consumer};

/// Which loss terms are active. Names follow the ablation tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Histogram loss on labeled data only.
    #[serde(rename = "HL")]
    Hl,
    /// Plus unweighted min-max entropy.
    #[serde(rename = "HL_MME")]
    HlMme,
    /// Plus weighted entropy minimised by encoder and head alike.
    #[serde(rename = "HL_WME")]
    HlWme,
    /// Weighted min-max entropy with one-hot (Dirac) targets.
    #[serde(rename = "HL_DD_WMME")]
    HlDdWmme,
    /// Weighted min-max entropy.
    #[serde(rename = "HL_WMME")]
    HlWmme,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Hl, Mode::HlMme, Mode::HlWme, Mode::HlDdWmme, Mode::HlWmme];

    pub fn label(self) -> &'static str {
        match self {
            Mode::Hl => "HL",
            Mode::HlMme => "HL+MME",
            Mode::HlWme => "HL+WME",
            Mode::HlDdWmme => "HL(DD)+WMME",
            Mode::HlWmme => "HL+WMME",
        }
    }

    pub fn uses_entropy(self) -> bool {
        self != Mode::Hl
    }

    pub fn weighted(self) -> bool {
        matches!(self, Mode::HlWme | Mode::HlDdWmme | Mode::HlWmme)
    }

    /// Scale applied to the entropy gradient of the head parameters.
    pub fn head_grad_scale(self) -> f64 {
        match self {
            Mode::HlWme => 1.0,
            _ => -1.0,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Per-sample target distribution for the histogram loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetKind {
    /// Truncated Gaussian; `sigma` defaults to the square root of the bin width.
    TruncatedGaussian {
        #[serde(default)]
        sigma: Option<f64>,
    },
    Dirac,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub bins: usize,
    pub support: [f64; 2],
    pub target: TargetKind,
    /// Hidden layer widths between the input and the histogram output.
    pub hidden: Vec<usize>,
    pub t1: usize,
    pub t2: usize,
    pub alpha_inf: f64,
    /// Replaces the schedule with a constant weight when set.
    pub alpha_override: Option<f64>,
    pub beta: f64,
    pub mode: Mode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 1e-3,
            batch_size: 64,
            bins: 200,
            support: [0.0, 800.0],
            target: TargetKind::TruncatedGaussian { sigma: None },
            hidden: vec![512, 256, 256, 256, 256, 200],
            t1: 15,
            t2: 80,
            alpha_inf: 1.0,
            alpha_override: None,
            beta: 1.0,
            mode: Mode::HlWmme,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train config: {m}")));
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return bad("learning rate and batch size must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("need at least one hidden layer, all widths positive");
        }
        if let Some(a) = self.alpha_override {
            if !(a >= 0.0 && a.is_finite()) {
                return bad("alpha override must be finite and nonnegative");
            }
        }
        self.histogram()?;
        self.schedule()?;
        self.weighting()?;
        self.target_mode()?.validate()
    }

    pub fn histogram(&self) -> Result<HistogramSpec> {
        HistogramSpec::new(self.support[0], self.support[1], self.bins)
    }

    pub fn schedule(&self) -> Result<AlphaSchedule> {
        AlphaSchedule::new(self.t1, self.t2, self.alpha_inf)
    }

    pub fn weighting(&self) -> Result<WeightingConfig> {
        WeightingConfig::new(self.beta)
    }

    /// Dirac targets in the Dirac ablation, otherwise whatever `target` says.
    pub fn target_mode(&self) -> Result<TargetMode> {
        let spec = self.histogram()?;
        Ok(match (self.mode, self.target) {
            (Mode::HlDdWmme, _) | (_, TargetKind::Dirac) => TargetMode::DiracDelta,
            (_, TargetKind::TruncatedGaussian { sigma: Some(sigma) }) => {
                TargetMode::TruncatedGaussian { sigma }
            }
            (_, TargetKind::TruncatedGaussian { sigma: None }) => TargetMode::sqrt_width_gaussian(&spec),
        })
    }

    /// Entropy weight at 1-based epoch `t`.
    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(match self.alpha_override {
            Some(a) => a,
            None => alpha_at(t, &self.schedule()?),
        })
    }

    pub fn layer_sizes(&self, input_dim: usize) -> Vec<usize> {
        let mut s = vec![input_dim];
        s.extend(&self.hidden);
        s.push(self.bins);
        s
    }
}

/// Loss values of one step. `None` means the term was not evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub source: f64,
    pub target: Option<f64>,
    pub entropy: Option<f64>,
    /// False when a loss or gradient was non-finite and no update was applied.
    pub applied: bool,
}

impl LossComponents {
    pub fn is_finite(&self) -> bool {
        self.source.is_finite()
            && self.target.is_none_or(f64::is_finite)
            && self.entropy.is_none_or(f64::is_finite)
    }
}

/// Inputs and histogram targets of one step.
#[derive(Debug, Clone, Copy)]
pub struct StepBatch<'a> {
    pub source: (&'a Matrix, &'a Matrix),
    pub target_labeled: Option<(&'a Matrix, &'a Matrix)>,
    pub target_unlabeled: Option<&'a Matrix>,
}

/// Encodings of all labeled rows, used to score unlabeled samples.
#[derive(Debug, Clone, Copy)]
pub struct Weighting<'a> {
    pub labeled_features: &'a Matrix,
    pub config: WeightingConfig,
}

/// Gradients of one step before the optimizer sees them.
pub fn step_gradients(
    model: &Model,
    batch: &StepBatch,
    alpha: f64,
    mode: Mode,
    weighting: Option<Weighting>,
) -> Result<(Gradients, LossComponents)> {
    let mut grads = Gradients::zeros_like(model);

    let (xs, ps) = batch.source;
    let (q, cache) = forward(model, xs)?;
    let source = histogram_loss(ps, &q)?;
    grads.add_scaled(&backward(model, &cache, &histogram_loss_grad(ps, &q)?, 1.0)?, 1.0)?;

    let mut target = None;
    if let Some((xt, pt)) = batch.target_labeled.filter(|(x, _)| x.rows() > 0) {
        let (q, cache) = forward(model, xt)?;
        target = Some(histogram_loss(pt, &q)?);
        grads.add_scaled(&backward(model, &cache, &histogram_loss_grad(pt, &q)?, 1.0)?, 1.0)?;
    }

    let mut entropy = None;
    let unlabeled = batch.target_unlabeled.filter(|x| x.rows() > 0);
    if let (true, Some(xu)) = (mode.uses_entropy() && alpha != 0.0, unlabeled) {
        let (q, cache) = forward(model, xu)?;
        let scores = if mode.weighted() {
            let w = weighting.ok_or_else(|| {
                Error::State("weighted mode needs labeled encodings to score against".into())
            })?;
            let d = nearest_labeled_distances(cache.encoder_output(), w.labeled_features)?;
            sample_scores(&d, &w.config)?
        } else {
            SampleWeights::ones(xu.rows())
        };
        entropy = Some(weighted_entropy_loss(&q, &scores)?);
        let mut dq = weighted_entropy_grad(&q, &scores)?;
        dq.scale(alpha);
        grads.add_scaled(&backward(model, &cache, &dq, mode.head_grad_scale())?, 1.0)?;
    }

    Ok((grads, LossComponents { source, target, entropy, applied: false }))
}

/// One optimizer step. Non-finite losses or gradients skip the update.
pub fn train_step(
    model: &mut Model,
    adam: &mut AdamState,
    batch: &StepBatch,
    alpha: f64,
    mode: Mode,
    weighting: Option<Weighting>,
) -> Result<LossComponents> {
    let (grads, mut losses) = step_gradients(model, batch, alpha, mode, weighting)?;
    if losses.is_finite() && grads.is_finite() {
        adam_step(model, &grads, adam)?;
        losses.applied = true;
    }
    Ok(losses)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub source_loss: f64,
    pub target_loss: Option<f64>,
    pub entropy: Option<f64>,
    pub alpha: f64,
    pub val_r2_x100: Option<f64>,
    pub val_mae: f64,
}

/// Everything needed to calibrate raw features.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub config: TrainConfig,
    pub scaler: StandardScaler,
    pub histogram: HistogramSpec,
    /// Epoch the parameters were taken from; 0 is the initialisation.
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    config: TrainConfig,
    scaler: StandardScaler,
    histogram: HistogramSpec,
    epoch: usize,
}

const CHECKPOINT_KIND: &str = "histda-checkpoint";

impl Checkpoint {
    /// Point estimates for unscaled feature rows.
    pub fn predict(&self, x_raw: &Matrix) -> Result<Vec<f64>> {
        let q = self.model.predict(&self.scaler.apply(x_raw)?)?;
        expectation_rows(&q, &self.histogram)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = CheckpointMeta {
            kind: CHECKPOINT_KIND.into(),
            config: self.config.clone(),
            scaler: self.scaler.clone(),
            histogram: self.histogram,
            epoch: self.epoch,
        };
        let mut buf = Vec::new();
        write_model(&mut buf, &self.model, &serde_json::to_value(meta)?)?;
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (model, extra) = read_model(bytes)?;
        let meta: CheckpointMeta = serde_json::from_value(extra)?;
        if meta.kind != CHECKPOINT_KIND {
            return Err(Error::Data(format!("not a checkpoint: kind {:?}", meta.kind)));
        }
        model.check_histogram_head(meta.histogram.bins())?;
        Ok(Self {
            model,
            config: meta.config,
            scaler: meta.scaler,
            histogram: meta.histogram,
            epoch: meta.epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub logs: Vec<EpochLog>,
    /// Validation metrics of the selected checkpoint, absent when no epoch ran.
    pub best_val: Option<EvalReport>,
}

/// Endless mini-batches over `n` rows, reshuffled after every pass.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Cycler {
    fn new(n: usize, mut rng: ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self { order, pos: 0, rng }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let n = self.order.len();
        let size = size.min(n);
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == n {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            let take = (size - out.len()).min(n - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}

const DIVERGENCE_STEPS: usize = 3;

/// Trains one model and keeps the epoch with the best validation R² on the
/// target domain (earliest epoch on ties).
///
/// Features are standardised with a scaler fitted on the source training rows
/// and all target training rows, labeled and unlabeled.
pub fn run_training(bundle: &SplitBundle, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    bundle.validate()?;
    let spec = cfg.histogram()?;
    let target_mode = cfg.target_mode()?;
    let weighting_cfg = cfg.weighting()?;
    if bundle.source_train.is_empty() {
        return Err(Error::Data("source training split is empty".into()));
    }

    let scaler = StandardScaler::fit(&[
        &bundle.source_train.x,
        &bundle.target_labeled.x,
        &bundle.target_unlabeled.x,
    ])?;
    let xs = scaler.apply(&bundle.source_train.x)?;
    let xtl = scaler.apply(&bundle.target_labeled.x)?;
    let xtu = scaler.apply(&bundle.target_unlabeled.x)?;
    let xval = scaler.apply(&bundle.target_val.x)?;
    let yval = bundle.target_val.labels().unwrap_or_default();
    let ps = make_targets(bundle.source_train.labels().unwrap_or_default(), &spec, target_mode)?;
    let ptl = make_targets(bundle.target_labeled.labels().unwrap_or_default(), &spec, target_mode)?;
    let labeled_union = Matrix::vstack(&[&xs, &xtl])?;

    let mut model = init_model(&cfg.layer_sizes(bundle.dim()), cfg.seed)?;
    let mut adam = AdamState::for_model(&model, AdamConfig::with_learning_rate(cfg.learning_rate));
    let mut source_rng = stream(cfg.seed, Consumer::SourceBatches);
    let mut tl_stream = Cycler::new(xtl.rows(), stream(cfg.seed, Consumer::TargetLabeledBatches));
    let mut tu_stream = Cycler::new(xtu.rows(), stream(cfg.seed, Consumer::TargetUnlabeledBatches));

    let mut best = Checkpoint {
        model: model.clone(),
        config: cfg.clone(),
        scaler: scaler.clone(),
        histogram: spec,
        epoch: 0,
    };
    let mut best_val: Option<EvalReport> = None;
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut bad_steps = 0;
    let mut source_order: Vec<usize> = (0..xs.rows()).collect();

    for epoch in 1..=cfg.epochs {
        let alpha = cfg.alpha(epoch)?;
        let entropy_on = cfg.mode.uses_entropy() && alpha != 0.0 && xtu.rows() > 0;
        let labeled_features = if entropy_on && cfg.mode.weighted() {
            Some(model.encode(&labeled_union)?)
        } else {
            None
        };

        source_order.shuffle(&mut source_rng);
        let (mut sum_s, mut sum_t, mut sum_e, mut n_t, mut n_e, mut steps) = (0.0, 0.0, 0.0, 0, 0, 0);
        for chunk in source_order.chunks(cfg.batch_size) {
            let bxs = xs.select_rows(chunk);
            let bps = ps.select_rows(chunk);
            let tl_idx = tl_stream.next_batch(cfg.batch_size);
            let (bxt, bpt) = (xtl.select_rows(&tl_idx), ptl.select_rows(&tl_idx));
            let bxu = entropy_on.then(|| xtu.select_rows(&tu_stream.next_batch(cfg.batch_size)));
            let batch = StepBatch {
                source: (&bxs, &bps),
                target_labeled: Some((&bxt, &bpt)),
                target_unlabeled: bxu.as_ref(),
            };
            let weighting = labeled_features
                .as_ref()
                .map(|f| Weighting { labeled_features: f, config: weighting_cfg });
            let losses = train_step(&mut model, &mut adam, &batch, alpha, cfg.mode, weighting)?;
            if !losses.applied {
                bad_steps += 1;
                if bad_steps >= DIVERGENCE_STEPS {
                    return Err(Error::Divergence(format!(
                        "non-finite loss for {bad_steps} consecutive steps in epoch {epoch}: {losses:?}"
                    )));
                }
                continue;
            }
            bad_steps = 0;
            steps += 1;
            sum_s += losses.source;
            if let Some(t) = losses.target {
                sum_t += t;
                n_t += 1;
            }
            if let Some(e) = losses.entropy {
                sum_e += e;
                n_e += 1;
            }
        }

        let pred = expectation_rows(&model.predict(&xval)?, &spec)?;
        let val = metrics(yval, &pred).ok();
        let val_mae = match val {
            Some(r) => r.mae,
            None => mean_abs_err(yval, &pred),
        };
        logs.push(EpochLog {
            epoch,
            source_loss: sum_s / steps.max(1) as f64,
            target_loss: (n_t > 0).then(|| sum_t / n_t as f64),
            entropy: (n_e > 0).then(|| sum_e / n_e as f64),
            alpha,
            val_r2_x100: val.map(|r| r.r2_x100),
            val_mae,
        });
        let better = match (val, best_val) {
            (Some(v), Some(b)) => v.r2 > b.r2,
            (Some(_), None) => true,
            (None, _) => false,
        };
        if better {
            best.model = model.clone();
            best.epoch = epoch;
            best_val = val;
        }
    }
    if cfg.epochs > 0 && best_val.is_none() {
        return Err(Error::Data("target validation split cannot score R² (too small or constant)".into()));
    }
    Ok(TrainOutcome { checkpoint: best, logs, best_val })
}

fn mean_abs_err(y: &[f64], p: &[f64]) -> f64 {
    if y.is_empty() {
        return f64::NAN;
    }
    y.iter().zip(p).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64
}

/// Hyperparameter grid: every `bins` value crossed with every `alpha_inf` value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub bins: Vec<usize>,
    pub alpha_inf: Vec<f64>,
}

impl Grid {
    pub fn points(&self) -> Vec<(usize, f64)> {
        self.bins.iter().flat_map(|&k| self.alpha_inf.iter().map(move |&a| (k, a))).collect()
    }
}

/// Parses `start:end:step` (inclusive) or a comma-separated list.
pub fn parse_bins(spec: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("cannot parse bin grid {spec:?}"));
    let spec = spec.trim();
    if spec.is_empty() {
        return Ok(vec![]);
    }
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        [start, end, step] => {
            let (start, end, step): (usize, usize, usize) = (
                start.trim().parse().map_err(|_| bad())?,
                end.trim().parse().map_err(|_| bad())?,
                step.trim().parse().map_err(|_| bad())?,
            );
            if step == 0 || end < start {
                return Err(bad());
            }
            Ok((start..=end).step_by(step).collect())
        }
        [list] => list.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect(),
        _ => Err(bad()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub index: usize,
    pub bins: usize,
    pub alpha_inf: f64,
    pub seed: u64,
    pub val_r2_x100: Option<f64>,
    pub val_mae: Option<f64>,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub entries: Vec<GridEntry>,
    pub best_index: usize,
    pub best_config: TrainConfig,
}

/// Trains one model per grid point (seed `base.seed + index`) and selects
/// the highest validation R². Failed points are recorded and skipped.
pub fn grid_search(bundle: &SplitBundle, base: &TrainConfig, grid: &Grid) -> Result<GridReport> {
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::Config("grid search needs at least one point".into()));
    }
    let mut entries = Vec::with_capacity(points.len());
    let mut best: Option<(usize, f64)> = None;
    for (index, (bins, alpha_inf)) in points.into_iter().enumerate() {
        let cfg = TrainConfig { bins, alpha_inf, seed: base.seed + index as u64, ..base.clone() };
        let mut entry = GridEntry {
            index,
            bins,
            alpha_inf,
            seed: cfg.seed,
            val_r2_x100: None,
            val_mae: None,
            best_epoch: None,
            error: None,
        };
        match run_training(bundle, &cfg) {
            Ok(out) => {
                if let Some(v) = out.best_val {
                    entry.val_r2_x100 = Some(v.r2_x100);
                    entry.val_mae = Some(v.mae);
                    if best.is_none_or(|(_, b)| v.r2_x100 > b) {
                        best = Some((index, v.r2_x100));
                    }
                }
                entry.best_epoch = Some(out.checkpoint.epoch);
            }
            Err(e) => entry.error = Some(e.to_string()),
        }
        entries.push(entry);
    }
    let (best_index, _) =
        best.ok_or_else(|| Error::Data("every grid point failed to produce a validation score".into()))?;
    let e = &entries[best_index];
    let best_config =
        TrainConfig { bins: e.bins, alpha_inf: e.alpha_inf, seed: e.seed, ..base.clone() };
    Ok(GridReport { entries, best_index, best_config })
}
