//! Lifelong digital-twin updating.
//!
//! A small feed-forward network (the digital twin) models a degrading
//! system stage by stage. Fine-tuned configurations are stored, compressed
//! by an autoencoder into latent features, and a sequence model forecasts
//! how those features — and therefore the twin — evolve over future stages.

// Validation is written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod entropy;
pub mod error;
pub mod evaluation;
pub mod lifecycle;
pub mod networks;
mod train;

pub use error::{Error, Result};
pub use train::{LossTerms, TrainConfig, TrainLog};
