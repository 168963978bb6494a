//! Latent-feature forecasters: a 2-layer LSTM or a 6-layer single-head
//! Transformer encoder, each followed by the same tanh head.
//!
//! Both map a window of `w` latent features (`1 x L` each) to the next one.

use serde::{Deserialize, Serialize};

use super::{init_linear, linear_stack, run_inference, LatentFeature};
use crate::autodiff::{Rng, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::train::{objective_and_gradient, train, LossTerms, TrainConfig, TrainLog};

pub const TRANSFORMER_LAYERS: usize = 6;
const LSTM_LAYERS: usize = 2;
/// Tensors per Transformer encoder layer: q, k, v, out projections (4x W, b),
/// two layer norms (gamma, beta), two feed-forward maps (W, b).
const TRANSFORMER_LAYER_TENSORS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForecasterKind {
    Lstm,
    Transformer,
}

impl std::fmt::Display for ForecasterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ForecasterKind::Lstm => "lstm",
            ForecasterKind::Transformer => "transformer",
        })
    }
}

impl std::str::FromStr for ForecasterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lstm" => Ok(ForecasterKind::Lstm),
            "transformer" => Ok(ForecasterKind::Transformer),
            other => Err(Error::InvalidConfig(format!(
                "unknown forecaster '{other}'"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForecasterSpec {
    pub kind: ForecasterKind,
    pub latent_dim: usize,
    pub window: usize,
    /// Encoder depth for the Transformer; 0 bypasses the encoder entirely.
    pub encoder_layers: usize,
}

impl ForecasterSpec {
    pub fn lstm(latent_dim: usize, window: usize) -> Self {
        ForecasterSpec {
            kind: ForecasterKind::Lstm,
            latent_dim,
            window,
            encoder_layers: 0,
        }
    }

    pub fn transformer(latent_dim: usize, window: usize) -> Self {
        ForecasterSpec {
            kind: ForecasterKind::Transformer,
            latent_dim,
            window,
            encoder_layers: TRANSFORMER_LAYERS,
        }
    }

    pub fn of_kind(kind: ForecasterKind, latent_dim: usize, window: usize) -> Self {
        match kind {
            ForecasterKind::Lstm => Self::lstm(latent_dim, window),
            ForecasterKind::Transformer => Self::transformer(latent_dim, window),
        }
    }

    /// LSTM hidden width `2L`.
    pub fn hidden_width(&self) -> usize {
        2 * self.latent_dim
    }

    /// Transformer feed-forward width `2L`.
    pub fn ff_width(&self) -> usize {
        2 * self.latent_dim
    }

    /// Head widths from its input to the `L` output.
    pub fn head_widths(&self) -> Vec<usize> {
        let l = self.latent_dim;
        let input = match self.kind {
            ForecasterKind::Lstm => 2 * l,
            ForecasterKind::Transformer => l,
        };
        vec![input, 2 * l, 4 * l, 3 * l, 2 * l, l]
    }

    fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.window == 0 {
            return Err(Error::InvalidConfig(format!(
                "forecaster needs L >= 1 and w >= 1, got L = {}, w = {}",
                self.latent_dim, self.window
            )));
        }
        Ok(())
    }

    fn body_tensor_count(&self) -> usize {
        match self.kind {
            ForecasterKind::Lstm => 3 * LSTM_LAYERS,
            ForecasterKind::Transformer => TRANSFORMER_LAYER_TENSORS * self.encoder_layers,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Forecaster {
    spec: ForecasterSpec,
    params: Vec<Tensor>,
}

impl Forecaster {
    pub fn new(spec: ForecasterSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = Rng::new(seed);
        let l = spec.latent_dim;
        let mut params = Vec::new();
        match spec.kind {
            ForecasterKind::Lstm => {
                let h = spec.hidden_width();
                for layer in 0..LSTM_LAYERS {
                    let d_in = if layer == 0 { l } else { h };
                    let (w_ih, _) = init_linear(&mut rng, d_in, 4 * h);
                    let (w_hh, _) = init_linear(&mut rng, h, 4 * h);
                    params.push(w_ih);
                    params.push(w_hh);
                    params.push(Tensor::zeros(&[4 * h]));
                }
            }
            ForecasterKind::Transformer => {
                let ff = spec.ff_width();
                for _ in 0..spec.encoder_layers {
                    for _ in 0..4 {
                        let (w, b) = init_linear(&mut rng, l, l);
                        params.push(w);
                        params.push(b);
                    }
                    params.push(Tensor::filled(&[l], 1.0));
                    params.push(Tensor::zeros(&[l]));
                    let (w1, b1) = init_linear(&mut rng, l, ff);
                    let (w2, b2) = init_linear(&mut rng, ff, l);
                    params.extend([w1, b1, w2, b2]);
                    params.push(Tensor::filled(&[l], 1.0));
                    params.push(Tensor::zeros(&[l]));
                }
            }
        }
        let head = spec.head_widths();
        for pair in head.windows(2) {
            let (w, b) = init_linear(&mut rng, pair[0], pair[1]);
            params.push(w);
            params.push(b);
        }
        Ok(Forecaster { spec, params })
    }

    /// Same architecture with every parameter set to zero.
    pub fn zeros(spec: ForecasterSpec) -> Result<Self> {
        let mut f = Forecaster::new(spec, 0)?;
        for p in &mut f.params {
            p.data_mut().fill(0.0);
        }
        Ok(f)
    }

    pub fn spec(&self) -> &ForecasterSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn check_windows(&self, windows: &[Vec<LatentFeature>]) -> Result<()> {
        if windows.is_empty() {
            return Err(Error::Empty("window batch"));
        }
        for win in windows {
            if win.len() != self.spec.window {
                return Err(Error::shape(
                    "forecaster",
                    format!(
                        "window length {}, expected w = {}",
                        win.len(),
                        self.spec.window
                    ),
                ));
            }
            if let Some(bad) = win.iter().find(|f| f.width() != self.spec.latent_dim) {
                return Err(Error::shape(
                    "forecaster",
                    format!(
                        "feature width {}, expected L = {}",
                        bad.width(),
                        self.spec.latent_dim
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Forward graph for a batch of windows; returns `n x L`.
    pub(crate) fn forward_graph(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        windows: &[Vec<LatentFeature>],
    ) -> Result<Var> {
        self.check_windows(windows)?;
        let body = match self.spec.kind {
            ForecasterKind::Lstm => self.lstm_body(tape, vars, windows)?,
            ForecasterKind::Transformer => self.transformer_body(tape, vars, windows)?,
        };
        let head_vars = &vars[self.spec.body_tensor_count()..];
        let n_head = head_vars.len() / 2;
        let layers: Vec<(Var, Var, bool)> = (0..n_head)
            .map(|i| (head_vars[2 * i], head_vars[2 * i + 1], i + 1 < n_head))
            .collect();
        linear_stack(tape, body, &layers)
    }

    /// Final hidden state of the top LSTM layer, `n x 2L`.
    fn lstm_body(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        windows: &[Vec<LatentFeature>],
    ) -> Result<Var> {
        let n = windows.len();
        let h = self.spec.hidden_width();
        let mut seq: Vec<Var> = (0..self.spec.window)
            .map(|t| {
                let rows: Vec<Vec<f64>> = windows.iter().map(|w| w[t].0.clone()).collect();
                Tensor::from_rows(&rows).map(|m| tape.constant(m))
            })
            .collect::<Result<_>>()?;
        for layer in 0..LSTM_LAYERS {
            let (w_ih, w_hh, b) = (vars[3 * layer], vars[3 * layer + 1], vars[3 * layer + 2]);
            let mut hidden = tape.constant(Tensor::zeros(&[n, h]));
            let mut cell = tape.constant(Tensor::zeros(&[n, h]));
            let mut outputs = Vec::with_capacity(seq.len());
            for &x in &seq {
                let zx = tape.affine(x, w_ih, b)?;
                let zh = tape.matmul_nt(hidden, w_hh)?;
                let z = tape.add(zx, zh)?;
                let gi = tape.slice_cols(z, 0, h)?;
                let gf = tape.slice_cols(z, h, h)?;
                let gg = tape.slice_cols(z, 2 * h, h)?;
                let go = tape.slice_cols(z, 3 * h, h)?;
                let i = tape.sigmoid(gi)?;
                let f = tape.sigmoid(gf)?;
                let g = tape.tanh(gg)?;
                let o = tape.sigmoid(go)?;
                let keep = tape.mul(f, cell)?;
                let write = tape.mul(i, g)?;
                cell = tape.add(keep, write)?;
                let squashed = tape.tanh(cell)?;
                hidden = tape.mul(o, squashed)?;
                outputs.push(hidden);
            }
            seq = outputs;
        }
        Ok(*seq.last().expect("window is nonempty"))
    }

    /// Encoder stack followed by sum pooling over the window, `n x L`.
    fn transformer_body(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        windows: &[Vec<LatentFeature>],
    ) -> Result<Var> {
        let w = self.spec.window;
        let rows: Vec<Vec<f64>> = windows
            .iter()
            .flat_map(|win| win.iter().map(|f| f.0.clone()))
            .collect();
        let mut x = tape.constant(Tensor::from_rows(&rows)?);
        for layer in 0..self.spec.encoder_layers {
            let p =
                &vars[TRANSFORMER_LAYER_TENSORS * layer..TRANSFORMER_LAYER_TENSORS * (layer + 1)];
            let q = tape.affine(x, p[0], p[1])?;
            let k = tape.affine(x, p[2], p[3])?;
            let v = tape.affine(x, p[4], p[5])?;
            let att = tape.block_attention(q, k, v, w)?;
            let proj = tape.affine(att, p[6], p[7])?;
            let res = tape.add(x, proj)?;
            x = tape.layer_norm(res, p[8], p[9])?;
            let hid = tape.affine(x, p[10], p[11])?;
            let hid = tape.relu(hid)?;
            let ff = tape.affine(hid, p[12], p[13])?;
            let res = tape.add(x, ff)?;
            x = tape.layer_norm(res, p[14], p[15])?;
        }
        tape.sum_blocks(x, w)
    }

    pub fn predict_batch(&self, windows: &[Vec<LatentFeature>]) -> Result<Vec<LatentFeature>> {
        run_inference(&self.params, |tape, vars| {
            let out = self.forward_graph(tape, vars, windows)?;
            let t = tape.value(out)?;
            Ok((0..t.rows())
                .map(|r| LatentFeature(t.row_slice(r).to_vec()))
                .collect())
        })
    }

    /// One-step-ahead objective over every window of `features` plus
    /// `alpha * l2`, with its gradient (one tensor per parameter tensor).
    pub fn loss_and_gradient(
        &self,
        features: &[LatentFeature],
        alpha: f64,
    ) -> Result<(LossTerms, Vec<Tensor>)> {
        let objective = self.objective(features)?;
        objective_and_gradient("forecaster", &self.params, alpha, &objective)
    }

    /// Distance of the one-step-ahead objective over `features` from the
    /// nearest ReLU kink (see [`Tape::relu_margin`]); infinite for LSTMs.
    pub fn relu_margin(&self, features: &[LatentFeature]) -> Result<f64> {
        let objective = self.objective(features)?;
        run_inference(&self.params, |tape, vars| {
            objective(tape, vars)?;
            Ok(tape.relu_margin())
        })
    }

    fn objective<'a>(
        &'a self,
        features: &[LatentFeature],
    ) -> Result<impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'a> {
        let (inputs, targets) = training_pairs(features, self.spec.window)?;
        let target = Tensor::from_rows(&targets.iter().map(|t| t.0.clone()).collect::<Vec<_>>())?;
        Ok(move |tape: &mut Tape, vars: &[Var]| {
            let pred = self.forward_graph(tape, vars, &inputs)?;
            let t = tape.constant(target.clone());
            tape.mse(pred, t)
        })
    }

    /// Predict the feature following `window`.
    pub fn predict(&self, window: &[LatentFeature]) -> Result<LatentFeature> {
        Ok(self.predict_batch(&[window.to_vec()])?.remove(0))
    }
}

/// Supervised pairs `[s_{j-w}, ..., s_{j-1}] -> s_j` for every valid `j`.
pub fn training_pairs(
    features: &[LatentFeature],
    window: usize,
) -> Result<(Vec<Vec<LatentFeature>>, Vec<LatentFeature>)> {
    if window == 0 || features.len() < window + 1 {
        return Err(Error::InsufficientHistory {
            needed: window + 1,
            have: features.len(),
        });
    }
    let inputs = (window..features.len())
        .map(|j| features[j - window..j].to_vec())
        .collect();
    let targets = features[window..].to_vec();
    Ok((inputs, targets))
}

/// Train a fresh forecaster on every window of `features`.
pub fn forecaster_train(
    features: &[LatentFeature],
    spec: ForecasterSpec,
    cfg: &TrainConfig,
) -> Result<(Forecaster, TrainLog)> {
    forecaster_train_from(Forecaster::new(spec, cfg.seed)?, features, cfg)
}

/// Continue training `model` on every window of `features`.
pub fn forecaster_train_from(
    mut model: Forecaster,
    features: &[LatentFeature],
    cfg: &TrainConfig,
) -> Result<(Forecaster, TrainLog)> {
    let arch = model.clone();
    let objective = arch.objective(features)?;
    let log = train("forecaster", &mut model.params, cfg, objective)?;
    Ok((model, log))
}
