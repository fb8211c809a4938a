//! Model container: magic, header length, JSON header, little-endian payload.
//!
//! ```text
//! [8]  magic "HISTDA01"
//! [8]  header length, u64 LE
//! [n]  UTF-8 JSON header (ModelHeader)
//! [..] parameters as f64 LE, per layer: weights row-major, then bias
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Activation, DenseLayer, Model};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MODEL_MAGIC: &[u8; 8] = b"HISTDA01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub head_start: usize,
    pub seed: u64,
    /// Caller-defined metadata stored alongside the network.
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn write_model<W: Write>(mut w: W, model: &Model, extra: &serde_json::Value) -> Result<()> {
    let header = ModelHeader {
        layer_sizes: model.layer_sizes(),
        activations: model.layers().iter().map(DenseLayer::activation).collect(),
        head_start: model.head_start(),
        seed: model.seed(),
        extra: extra.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mut payload = Vec::with_capacity(model.param_count() * 8);
    for s in model.param_slices() {
        for v in s {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<(Model, serde_json::Value)> {
    let bad = |m: &str| Error::Data(format!("model container: {m}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: ModelHeader = serde_json::from_slice(&json)?;
    let sizes = &header.layer_sizes;
    if sizes.len() < 2 || header.activations.len() != sizes.len() - 1 {
        return Err(bad("layer sizes and activations disagree"));
    }
    let mut layers = Vec::with_capacity(sizes.len() - 1);
    for (pair, act) in sizes.windows(2).zip(&header.activations) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let weights = Matrix::from_vec(fan_in, fan_out, read_f64s(&mut r, fan_in * fan_out)?)?;
        let bias = read_f64s(&mut r, fan_out)?;
        layers.push(DenseLayer::new(weights, bias, *act)?);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(bad("trailing bytes after payload"));
    }
    let model = Model::new(layers, header.head_start)?.with_seed(header.seed);
    Ok((model, header.extra))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}
