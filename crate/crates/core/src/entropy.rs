//! Latent width from the entropy of an initial configuration.
//!
//! Parameters are treated as draws from a Gibbs distribution
//! `p_j = exp(-beta * theta_j) / sum_k exp(-beta * theta_k)` taken jointly
//! over every parameter. The Shannon entropy `H` (bits) of that distribution
//! sets the latent width `L = a * [H]`, with `[.]` rounding half to even.
//!
//! Raw parameter values enter the exponent, so negative weights receive
//! larger probabilities than positive weights of the same magnitude.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::round_half_even;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyConfig {
    pub beta: f64,
    /// Enlargement ratio `a >= 1`.
    pub a: f64,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        EntropyConfig { beta: 1.0, a: 2.0 }
    }
}

impl EntropyConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.beta.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "beta must be finite, got {}",
                self.beta
            )));
        }
        if !(self.a >= 1.0) || !self.a.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "a must be >= 1, got {}",
                self.a
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub probabilities: Vec<f64>,
    /// Entropy in bits.
    pub entropy: f64,
    pub latent_dim: usize,
    pub parameter_count: usize,
    pub config: EntropyConfig,
}

/// Gibbs probabilities of `params`, computed with a max shift.
pub fn gibbs_probabilities(params: &[f64], beta: f64) -> Result<Vec<f64>> {
    if params.is_empty() {
        return Err(Error::Empty("configuration"));
    }
    if let Some(bad) = params.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "parameter {bad} is not finite"
        )));
    }
    let logits: Vec<f64> = params.iter().map(|&t| -beta * t).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Shannon entropy in bits; zero-probability terms contribute nothing.
pub fn config_entropy(p: &[f64]) -> Result<f64> {
    let total: f64 = p.iter().sum();
    if p.is_empty() || (total - 1.0).abs() > 1e-9 || p.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::NotNormalized(total));
    }
    Ok(-p
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.log2())
        .sum::<f64>())
}

/// `L = a * [H]`, rounding half to even and never returning less than 1.
pub fn latent_dim(entropy: f64, a: f64) -> usize {
    let rounded = round_half_even(entropy.max(0.0));
    let l = (a * rounded).round() as usize;
    l.max(1)
}

/// Probabilities, entropy, and latent width for one configuration.
pub fn entropy_report(params: &[f64], cfg: &EntropyConfig) -> Result<EntropyReport> {
    cfg.validate()?;
    let probabilities = gibbs_probabilities(params, cfg.beta)?;
    let entropy = config_entropy(&probabilities)?;
    Ok(EntropyReport {
        latent_dim: latent_dim(entropy, cfg.a),
        parameter_count: params.len(),
        probabilities,
        entropy,
        config: cfg.clone(),
    })
}
