//! Histogram-loss regression with semi-supervised domain adaptation.
//!
//! A feed-forward network predicts a probability histogram over a bounded
//! target range; the point estimate is the histogram mean. Unlabeled target
//! rows enter through an entropy term, optionally weighted by how close each
//! row's encoding is to labeled data.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptation;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod histogram;
pub mod matrix;
pub mod nn;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use nn::{init_model, Model};
pub use train::{run_training, Checkpoint, Mode, TrainConfig};
