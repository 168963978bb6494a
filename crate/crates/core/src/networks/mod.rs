//! DT models, configuration autoencoders, and latent forecasters.

mod autoencoder;
mod fnn;
mod forecaster;

pub use autoencoder::{
    ae_decode, ae_encode, ae_train, AeKind, Autoencoder, AutoencoderSpec, DEFAULT_COMPRESSION_WIDTH,
};
pub use fnn::{
    flatten_layer, fnn_forward, fnn_loss_and_gradient, fnn_train, unflatten_layer, ConfigSnapshot,
    FnnSpec,
};
pub use forecaster::{
    forecaster_train, forecaster_train_from, training_pairs, Forecaster, ForecasterKind,
    ForecasterSpec, TRANSFORMER_LAYERS,
};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Rng, Tape, Tensor, Var};
use crate::error::Result;

/// Compressed `1 x L` representation of a configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentFeature(pub Vec<f64>);

impl LatentFeature {
    pub fn width(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Weight `d_out x d_in` and bias `d_out`, uniform in `+-1/sqrt(d_in)`.
pub(crate) fn init_linear(rng: &mut Rng, d_in: usize, d_out: usize) -> (Tensor, Tensor) {
    let bound = 1.0 / (d_in as f64).sqrt();
    let w = (0..d_in * d_out)
        .map(|_| rng.uniform(-bound, bound))
        .collect();
    let b = (0..d_out).map(|_| rng.uniform(-bound, bound)).collect();
    (
        Tensor::matrix(d_out, d_in, w).expect("nonzero dims"),
        Tensor::vector(b),
    )
}

/// Chain of affine maps; `true` applies tanh after that map.
pub(crate) fn linear_stack(
    tape: &mut Tape,
    mut x: Var,
    layers: &[(Var, Var, bool)],
) -> Result<Var> {
    for &(w, b, act) in layers {
        x = tape.affine(x, w, b)?;
        if act {
            x = tape.tanh(x)?;
        }
    }
    Ok(x)
}

/// Evaluate `build` with every parameter registered as a constant.
pub(crate) fn run_inference<T>(
    params: &[Tensor],
    build: impl FnOnce(&mut Tape, &[Var]) -> Result<T>,
) -> Result<T> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
    build(&mut tape, &vars)
}

/// Round to nearest, ties to even.
pub(crate) fn round_half_even(v: f64) -> f64 {
    v.round_ties_even()
}
