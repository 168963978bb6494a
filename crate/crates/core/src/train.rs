//! Full-batch training with the regularized objective `mse + alpha * l2`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Hyperparameters of one training routine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Weight of the squared 2-norm of all parameters; 0 disables it.
    pub alpha: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(epochs: usize, learning_rate: f64, alpha: f64, seed: u64) -> Self {
        TrainConfig {
            epochs,
            learning_rate,
            alpha,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        TrainConfig {
            seed,
            ..self.clone()
        }
    }
}

/// The two terms of the training objective and their weighted sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub mse: f64,
    pub l2: f64,
    pub alpha: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn combine(mse: f64, l2: f64, alpha: f64) -> Self {
        LossTerms {
            mse,
            l2,
            alpha,
            total: mse + alpha * l2,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainLog {
    /// Objective at the parameters each epoch started from.
    pub epoch_losses: Vec<f64>,
    pub initial: LossTerms,
    /// Objective evaluated at the returned parameters.
    pub last: LossTerms,
}

/// Evaluate the objective (and optionally its gradient) at `params`.
pub(crate) fn evaluate<F>(
    params: &[Tensor],
    alpha: f64,
    objective: &F,
    with_grads: bool,
) -> Result<(LossTerms, Option<Vec<Tensor>>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let data_loss = objective(&mut tape, &vars)?;
    let l2 = tape.l2_norm_sq(&vars)?;
    let reg = tape.scale(l2, alpha)?;
    let total = tape.add(data_loss, reg)?;
    let mse = tape.value(data_loss)?.data()[0];
    let l2v = tape.value(l2)?.data()[0];
    let terms = LossTerms {
        mse,
        l2: l2v,
        alpha,
        total: tape.value(total)?.data()[0],
    };
    if !with_grads || !terms.total.is_finite() {
        return Ok((terms, None));
    }
    let grads = tape.backward(total)?;
    let g = vars
        .iter()
        .map(|&v| grads.wrt(v))
        .collect::<Result<Vec<_>>>()?;
    Ok((terms, Some(g)))
}

/// Objective terms and the gradient of the total with respect to `params`.
pub(crate) fn objective_and_gradient<F>(
    phase: &'static str,
    params: &[Tensor],
    alpha: f64,
    objective: &F,
) -> Result<(LossTerms, Vec<Tensor>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (terms, grads) = evaluate(params, alpha, objective, true)?;
    match grads {
        Some(g) => Ok((terms, g)),
        None => Err(Error::Divergence {
            phase,
            epoch: 0,
            loss: terms.total,
        }),
    }
}

/// Run `cfg.epochs` full-batch Adam steps on `params`.
///
/// `objective` builds the data term (a scalar) from the parameter vars; the
/// `alpha * l2` term over every parameter is added here. On divergence the
/// error carries the failing epoch and `params` holds the last finite
/// iterate, so callers that want the pre-training state must keep a copy.
pub(crate) fn train<F>(
    phase: &'static str,
    params: &mut [Tensor],
    cfg: &TrainConfig,
    objective: F,
) -> Result<TrainLog>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    cfg.validate()?;
    let mut adam = AdamState::new(params);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut initial = None;
    for epoch in 0..cfg.epochs {
        let (terms, grads) = evaluate(params, cfg.alpha, &objective, true)?;
        if !terms.total.is_finite() {
            return Err(Error::Divergence {
                phase,
                epoch,
                loss: terms.total,
            });
        }
        initial.get_or_insert(terms);
        epoch_losses.push(terms.total);
        let grads = grads.expect("gradients requested");
        adam.step(params, &grads, cfg.learning_rate)
            .map_err(|e| match e {
                Error::NonFiniteGradient { .. } => Error::Divergence {
                    phase,
                    epoch,
                    loss: terms.total,
                },
                other => other,
            })?;
    }
    let (last, _) = evaluate(params, cfg.alpha, &objective, false)?;
    if !last.total.is_finite() {
        return Err(Error::Divergence {
            phase,
            epoch: cfg.epochs,
            loss: last.total,
        });
    }
    Ok(TrainLog {
        epoch_losses,
        initial: initial.unwrap_or(last),
        last,
    })
}
