//! Dense feed-forward network with hand-written forward and backward passes.
//!
//! A [`Model`] is split into an encoder (layers `0..head_start`) and a head
//! (layers `head_start..`). [`backward`] takes a `head_grad_scale` that
//! multiplies the head's parameter gradients while the encoder still receives
//! the plain chain-rule gradient. A scale of `-1.0` turns one backward pass
//! into a min-max update: the head ascends the objective while the encoder
//! descends it.

mod adam;
mod io;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use io::{read_model, write_model, ModelHeader, MODEL_MAGIC};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::matrix::Matrix;
use crate::rng::{stream, Consumer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Softmax,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// fan_in x fan_out
    weights: Matrix,
    bias: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if weights.cols() != bias.len() {
            return dim_err(format!(
                "bias of length {} for a layer with fan_out {}",
                bias.len(),
                weights.cols()
            ));
        }
        if weights.rows() == 0 || weights.cols() == 0 {
            return dim_err("layer dimensions must be positive");
        }
        Ok(Self { weights, bias, activation })
    }

    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.cols()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    fn forward(&self, input: &Matrix) -> Result<(Matrix, Matrix)> {
        let mut pre = input.matmul(&self.weights)?;
        pre.add_row_vector(&self.bias)?;
        let post = activate(self.activation, &pre);
        Ok((pre, post))
    }
}

fn activate(act: Activation, pre: &Matrix) -> Matrix {
    match act {
        Activation::Identity => pre.clone(),
        Activation::Relu => pre.map(|v| v.max(0.0)),
        Activation::Softmax => {
            let mut out = pre.clone();
            for r in 0..out.rows() {
                softmax_in_place(out.row_mut(r));
            }
            out
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Encoder layers `0..head_start` followed by head layers `head_start..`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<DenseLayer>,
    head_start: usize,
    seed: u64,
}

impl Model {
    pub fn new(layers: Vec<DenseLayer>, head_start: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a model needs at least one layer".into()));
        }
        if head_start == 0 || head_start > layers.len() {
            return Err(Error::Config(format!(
                "head_start {head_start} outside 1..={}",
                layers.len()
            )));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return dim_err(format!(
                    "layer {i} emits {} features but layer {} expects {}",
                    pair[0].fan_out(),
                    i + 1,
                    pair[1].fan_in()
                ));
            }
        }
        Ok(Self { layers, head_start, seed: 0 })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn head_start(&self) -> usize {
        self.head_start
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    /// Width of the encoder output.
    pub fn feature_dim(&self) -> usize {
        self.layers[self.head_start - 1].fan_out()
    }

    /// `[input, hidden..., output]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(DenseLayer::fan_out));
        sizes
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.fan_in() * l.fan_out() + l.fan_out()).sum()
    }

    /// Checks that the model ends in a softmax over `bins` outputs.
    pub fn check_histogram_head(&self, bins: usize) -> Result<()> {
        let last = &self.layers[self.layers.len() - 1];
        if last.activation() != Activation::Softmax || last.fan_out() != bins {
            return Err(Error::Config(format!(
                "model must end in a {bins}-way softmax, found {:?} with {} outputs",
                last.activation(),
                last.fan_out()
            )));
        }
        Ok(())
    }

    /// Encoder features for `x`.
    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut a = x.clone();
        for layer in &self.layers[..self.head_start] {
            a = layer.forward(&a)?.1;
        }
        Ok(a)
    }

    /// Output rows for `x` without keeping a cache.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut a = x.clone();
        for layer in &self.layers {
            a = layer.forward(&a)?.1;
        }
        Ok(a)
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return dim_err(format!(
                "input has {} columns, model expects {}",
                x.cols(),
                self.input_dim()
            ));
        }
        Ok(())
    }

    /// Parameter buffers in a fixed order: per layer, weights then bias.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()]).collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

/// Builds a histogram network: ReLU hidden layers, softmax output, and the
/// output layer alone as the head.
///
/// `layer_sizes` is `[input, hidden..., bins]`. Hidden weights are He-uniform,
/// output weights Glorot-uniform, biases zero.
pub fn init_model(layer_sizes: &[usize], seed: u64) -> Result<Model> {
    if layer_sizes.len() < 3 {
        return Err(Error::Config(
            "layer sizes need an input, at least one hidden and an output width".into(),
        ));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::Config("layer sizes must be positive".into()));
    }
    let mut rng = stream(seed, Consumer::ModelInit);
    let n = layer_sizes.len() - 1;
    let mut layers = Vec::with_capacity(n);
    for (i, pair) in layer_sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let is_output = i == n - 1;
        let limit = if is_output {
            (6.0 / (fan_in + fan_out) as f64).sqrt()
        } else {
            (6.0 / fan_in as f64).sqrt()
        };
        let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
        let weights = Matrix::from_vec(fan_in, fan_out, data)?;
        let act = if is_output { Activation::Softmax } else { Activation::Relu };
        layers.push(DenseLayer::new(weights, vec![0.0; fan_out], act)?);
    }
    Ok(Model::new(layers, n - 1)?.with_seed(seed))
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
    head_start: usize,
}

impl ForwardCache {
    pub fn input(&self) -> &Matrix {
        &self.input
    }

    pub fn pre_activations(&self) -> &[Matrix] {
        &self.pre
    }

    pub fn activations(&self) -> &[Matrix] {
        &self.post
    }

    /// Encoder features recorded during the pass.
    pub fn encoder_output(&self) -> &Matrix {
        &self.post[self.head_start - 1]
    }

    pub fn output(&self) -> &Matrix {
        &self.post[self.post.len() - 1]
    }
}

pub fn forward(model: &Model, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
    model.check_input(x)?;
    let n = model.layers.len();
    let mut pre = Vec::with_capacity(n);
    let mut post: Vec<Matrix> = Vec::with_capacity(n);
    for layer in &model.layers {
        let input = post.last().unwrap_or(x);
        let (z, a) = layer.forward(input)?;
        pre.push(z);
        post.push(a);
    }
    let out = post[n - 1].clone();
    Ok((out, ForwardCache { input: x.clone(), pre, post, head_start: model.head_start }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Gradients mirroring the parameter layout of a [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        let layers = model
            .layers
            .iter()
            .map(|l| LayerGrad {
                weights: Matrix::zeros(l.fan_in(), l.fan_out()),
                bias: vec![0.0; l.fan_out()],
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[LayerGrad] {
        &self.layers
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return dim_err("gradient sets have different layer counts");
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if a.weights.shape() != b.weights.shape() || a.bias.len() != b.bias.len() {
                return dim_err("gradient layer shapes differ");
            }
            for (x, y) in a.weights.as_mut_slice().iter_mut().zip(b.weights.as_slice()) {
                *x += scale * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    /// Same order as [`Model::param_slices`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()]).collect()
    }

    pub fn norm(&self) -> f64 {
        self.slices().iter().flat_map(|s| s.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Backpropagates `dq`, the gradient of a loss with respect to the model
/// output, through the cached pass.
///
/// Head parameter gradients are multiplied by `head_grad_scale`; the signal
/// sent on into the encoder is not.
pub fn backward(
    model: &Model,
    cache: &ForwardCache,
    dq: &Matrix,
    head_grad_scale: f64,
) -> Result<Gradients> {
    let n = model.layers.len();
    if cache.post.len() != n || cache.head_start != model.head_start {
        return Err(Error::State("forward cache was produced by a different model".into()));
    }
    for (layer, a) in model.layers.iter().zip(&cache.post) {
        if a.cols() != layer.fan_out() {
            return Err(Error::State("forward cache was produced by a different model".into()));
        }
    }
    if cache.input.cols() != model.input_dim() {
        return Err(Error::State("forward cache was produced by a different model".into()));
    }
    if dq.shape() != cache.post[n - 1].shape() {
        return dim_err(format!(
            "output gradient is {:?}, forward output was {:?}",
            dq.shape(),
            cache.post[n - 1].shape()
        ));
    }

    let mut grads: Vec<Option<LayerGrad>> = vec![None; n];
    let mut upstream = dq.clone();
    for l in (0..n).rev() {
        let layer = &model.layers[l];
        let act = &cache.post[l];
        let dz = activation_backward(layer.activation, &cache.pre[l], act, upstream);
        let input = if l == 0 { &cache.input } else { &cache.post[l - 1] };
        let mut dw = input.t_matmul(&dz)?;
        let mut db = dz.col_sums();
        if l >= model.head_start && head_grad_scale != 1.0 {
            dw.scale(head_grad_scale);
            db.iter_mut().for_each(|v| *v *= head_grad_scale);
        }
        upstream = if l > 0 { dz.matmul_t(&layer.weights)? } else { Matrix::zeros(0, 0) };
        grads[l] = Some(LayerGrad { weights: dw, bias: db });
    }
    Ok(Gradients { layers: grads.into_iter().map(|g| g.expect("every layer visited")).collect() })
}

fn activation_backward(act: Activation, pre: &Matrix, post: &Matrix, mut upstream: Matrix) -> Matrix {
    match act {
        Activation::Identity => upstream,
        Activation::Relu => {
            for (g, z) in upstream.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                if *z <= 0.0 {
                    *g = 0.0;
                }
            }
            upstream
        }
        Activation::Softmax => {
            for r in 0..upstream.rows() {
                let q = post.row(r);
                let g = upstream.row_mut(r);
                let dot: f64 = g.iter().zip(q).map(|(a, b)| a * b).sum();
                for (gk, qk) in g.iter_mut().zip(q) {
                    *gk = qk * (*gk - dot);
                }
            }
            upstream
        }
    }
}
