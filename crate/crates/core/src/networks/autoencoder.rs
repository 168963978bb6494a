//! Configuration autoencoders.
//!
//! The joint architecture compresses each parameter group to a fixed width,
//! concatenates the groups, and runs a halving trunk down to the latent
//! width; the decoder mirrors it and ends with one linear head per group.
//! The tapered architecture is the single-group variant used by the
//! per-layer ablation: `a -> [a/2] -> [a/4] -> L` and back.

use serde::{Deserialize, Serialize};

use super::{
    init_linear, linear_stack, round_half_even, run_inference, ConfigSnapshot, FnnSpec,
    LatentFeature,
};
use crate::autodiff::{Rng, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::train::{objective_and_gradient, train, LossTerms, TrainConfig, TrainLog};

pub const DEFAULT_COMPRESSION_WIDTH: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AeKind {
    /// All groups encoded together; `compression_width` is 64 in the
    /// reference architecture.
    Joint { compression_width: usize },
    /// One group, geometric taper.
    Tapered,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutoencoderSpec {
    pub input_sizes: Vec<usize>,
    pub latent_dim: usize,
    pub kind: AeKind,
}

impl AutoencoderSpec {
    pub fn joint(input_sizes: Vec<usize>, latent_dim: usize) -> Self {
        Self::joint_with_width(input_sizes, latent_dim, DEFAULT_COMPRESSION_WIDTH)
    }

    pub fn joint_with_width(input_sizes: Vec<usize>, latent_dim: usize, width: usize) -> Self {
        AutoencoderSpec {
            input_sizes,
            latent_dim,
            kind: AeKind::Joint {
                compression_width: width,
            },
        }
    }

    pub fn tapered(input_size: usize, latent_dim: usize) -> Self {
        AutoencoderSpec {
            input_sizes: vec![input_size],
            latent_dim,
            kind: AeKind::Tapered,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_sizes.is_empty() || self.input_sizes.contains(&0) || self.latent_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "autoencoder needs nonempty inputs and L >= 1, got {:?} / L = {}",
                self.input_sizes, self.latent_dim
            )));
        }
        match self.kind {
            AeKind::Joint { compression_width } if compression_width < 8 => Err(
                Error::InvalidConfig("compression width must be >= 8".into()),
            ),
            AeKind::Tapered if self.input_sizes.len() != 1 => Err(Error::InvalidConfig(
                "tapered autoencoder takes exactly one input group".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Encoder trunk output widths, ending in `L`.
    ///
    /// Joint: `[cN/2, cN/4, cN/8, L]` after the `cN` concatenation.
    /// Tapered: `[[a/2], [a/4], L]`.
    pub fn encoder_widths(&self) -> Vec<usize> {
        match self.kind {
            AeKind::Joint { compression_width } => {
                let cn = compression_width * self.input_sizes.len();
                vec![cn / 2, cn / 4, cn / 8, self.latent_dim]
            }
            AeKind::Tapered => {
                let a = self.input_sizes[0] as f64;
                vec![
                    (round_half_even(a / 2.0) as usize).max(1),
                    (round_half_even(a / 4.0) as usize).max(1),
                    self.latent_dim,
                ]
            }
        }
    }

    /// Width of the concatenated compressed groups (`cN`); joint only.
    pub fn concat_width(&self) -> Option<usize> {
        match self.kind {
            AeKind::Joint { compression_width } => Some(compression_width * self.input_sizes.len()),
            AeKind::Tapered => None,
        }
    }

    /// `(d_in, d_out, tanh)` of every affine map in parameter order.
    fn layer_plan(&self) -> Vec<(usize, usize, bool)> {
        let mut plan = Vec::new();
        match self.kind {
            AeKind::Joint {
                compression_width: c,
            } => {
                for &s in &self.input_sizes {
                    plan.push((s, c, true));
                }
                let mut widths = vec![c * self.input_sizes.len()];
                widths.extend(self.encoder_widths());
                let depth = widths.len() - 1;
                for i in 0..depth {
                    plan.push((widths[i], widths[i + 1], i + 1 < depth));
                }
                for i in (0..depth).rev() {
                    plan.push((widths[i + 1], widths[i], true));
                }
                for &s in &self.input_sizes {
                    plan.push((c, s, false));
                }
            }
            AeKind::Tapered => {
                let mut widths = vec![self.input_sizes[0]];
                widths.extend(self.encoder_widths());
                let depth = widths.len() - 1;
                for i in 0..depth {
                    plan.push((widths[i], widths[i + 1], i + 1 < depth));
                }
                for i in (0..depth).rev() {
                    plan.push((widths[i + 1], widths[i], i > 0));
                }
            }
        }
        plan
    }

    pub fn param_count(&self) -> usize {
        self.layer_plan().iter().map(|&(i, o, _)| (i + 1) * o).sum()
    }
}

/// Autoencoder parameters plus the architecture they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    spec: AutoencoderSpec,
    params: Vec<Tensor>,
}

impl Autoencoder {
    pub fn new(spec: AutoencoderSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = Rng::new(seed);
        let params = spec
            .layer_plan()
            .into_iter()
            .flat_map(|(i, o, _)| {
                let (w, b) = init_linear(&mut rng, i, o);
                [w, b]
            })
            .collect();
        Ok(Autoencoder { spec, params })
    }

    pub fn zeros(spec: AutoencoderSpec) -> Result<Self> {
        spec.validate()?;
        let params = spec
            .layer_plan()
            .into_iter()
            .flat_map(|(i, o, _)| [Tensor::zeros(&[o, i]), Tensor::zeros(&[o])])
            .collect();
        Ok(Autoencoder { spec, params })
    }

    pub fn from_params(spec: AutoencoderSpec, params: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        let plan = spec.layer_plan();
        if params.len() != 2 * plan.len()
            || plan
                .iter()
                .zip(params.chunks(2))
                .any(|(&(i, o, _), wb)| wb[0].shape() != [o, i] || wb[1].shape() != [o])
        {
            return Err(Error::shape(
                "autoencoder",
                "parameters do not match the spec",
            ));
        }
        Ok(Autoencoder { spec, params })
    }

    pub fn spec(&self) -> &AutoencoderSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.latent_dim
    }

    fn layers(&self, vars: &[Var], range: std::ops::Range<usize>) -> Vec<(Var, Var, bool)> {
        let plan = self.spec.layer_plan();
        range
            .map(|i| (vars[2 * i], vars[2 * i + 1], plan[i].2))
            .collect()
    }

    fn groups(&self) -> usize {
        self.spec.input_sizes.len()
    }

    /// Encoder graph: one `n x size_i` input per group, returns `n x L`.
    pub(crate) fn encode_graph(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        inputs: &[Var],
    ) -> Result<Var> {
        if inputs.len() != self.groups() {
            return Err(Error::shape(
                "ae_encode",
                format!("{} input groups, expected {}", inputs.len(), self.groups()),
            ));
        }
        for (k, &x) in inputs.iter().enumerate() {
            let cols = tape.value(x)?.cols();
            if cols != self.spec.input_sizes[k] {
                return Err(Error::shape(
                    "ae_encode",
                    format!(
                        "group {k} has {cols} values, expected {}",
                        self.spec.input_sizes[k]
                    ),
                ));
            }
        }
        match self.spec.kind {
            AeKind::Joint { .. } => {
                let n = self.groups();
                let mut compressed = Vec::with_capacity(n);
                for (k, &x) in inputs.iter().enumerate() {
                    compressed.push(linear_stack(tape, x, &self.layers(vars, k..k + 1))?);
                }
                let cat = tape.concat_cols(&compressed)?;
                linear_stack(tape, cat, &self.layers(vars, n..n + 4))
            }
            AeKind::Tapered => linear_stack(tape, inputs[0], &self.layers(vars, 0..3)),
        }
    }

    /// Decoder graph: `n x L` latent to one `n x size_i` output per group.
    pub(crate) fn decode_graph(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        latent: Var,
    ) -> Result<Vec<Var>> {
        let width = tape.value(latent)?.cols();
        if width != self.spec.latent_dim {
            return Err(Error::shape(
                "ae_decode",
                format!("latent width {width}, expected {}", self.spec.latent_dim),
            ));
        }
        match self.spec.kind {
            AeKind::Joint {
                compression_width: c,
            } => {
                let n = self.groups();
                let trunk = linear_stack(tape, latent, &self.layers(vars, n + 4..n + 8))?;
                let mut out = Vec::with_capacity(n);
                for k in 0..n {
                    let part = tape.slice_cols(trunk, k * c, c)?;
                    out.push(linear_stack(
                        tape,
                        part,
                        &self.layers(vars, n + 8 + k..n + 9 + k),
                    )?);
                }
                Ok(out)
            }
            AeKind::Tapered => Ok(vec![linear_stack(tape, latent, &self.layers(vars, 3..6))?]),
        }
    }

    fn group_matrices(&self, samples: &[Vec<Vec<f64>>]) -> Result<Vec<Tensor>> {
        (0..self.groups())
            .map(|k| {
                let rows: Vec<Vec<f64>> = samples
                    .iter()
                    .map(|s| s.get(k).cloned().unwrap_or_default())
                    .collect();
                Tensor::from_rows(&rows)
            })
            .collect()
    }

    /// Encode a batch of samples, each a list of group vectors.
    pub fn encode_batch(&self, samples: &[Vec<Vec<f64>>]) -> Result<Vec<LatentFeature>> {
        for s in samples {
            if s.len() != self.groups() {
                return Err(Error::shape(
                    "ae_encode",
                    format!("{} groups, expected {}", s.len(), self.groups()),
                ));
            }
        }
        let mats = self.group_matrices(samples)?;
        run_inference(&self.params, |tape, vars| {
            let inputs: Vec<Var> = mats.into_iter().map(|m| tape.constant(m)).collect();
            let z = self.encode_graph(tape, vars, &inputs)?;
            let z = tape.value(z)?;
            Ok((0..z.rows())
                .map(|r| LatentFeature(z.row_slice(r).to_vec()))
                .collect())
        })
    }

    /// Decode a batch of latent features into group vectors.
    pub fn decode_batch(&self, latents: &[LatentFeature]) -> Result<Vec<Vec<Vec<f64>>>> {
        let rows: Vec<Vec<f64>> = latents.iter().map(|l| l.0.clone()).collect();
        let z = Tensor::from_rows(&rows)?;
        run_inference(&self.params, |tape, vars| {
            let zv = tape.constant(z);
            let outs = self.decode_graph(tape, vars, zv)?;
            let mut samples = vec![Vec::with_capacity(outs.len()); latents.len()];
            for o in outs {
                let t = tape.value(o)?;
                for (r, s) in samples.iter_mut().enumerate() {
                    s.push(t.row_slice(r).to_vec());
                }
            }
            Ok(samples)
        })
    }

    /// Train a freshly initialized autoencoder on `samples` (each a list of
    /// group vectors), minimizing reconstruction MSE plus `alpha * l2`.
    pub fn train(
        spec: AutoencoderSpec,
        samples: &[Vec<Vec<f64>>],
        cfg: &TrainConfig,
    ) -> Result<(Self, TrainLog)> {
        Self::new(spec, cfg.seed)?.train_from(samples, cfg)
    }

    /// Continue training from the current parameters.
    pub fn train_from(
        self,
        samples: &[Vec<Vec<f64>>],
        cfg: &TrainConfig,
    ) -> Result<(Self, TrainLog)> {
        if samples.is_empty() {
            return Err(Error::Empty("autoencoder training set"));
        }
        let mut ae = self;
        let arch = ae.clone();
        let objective = arch.objective(samples)?;
        let log = train("autoencoder", &mut ae.params, cfg, objective)?;
        Ok((ae, log))
    }

    /// Reconstruction objective plus `alpha * l2` at the current parameters,
    /// with its gradient (one tensor per parameter tensor).
    pub fn loss_and_gradient(
        &self,
        samples: &[Vec<Vec<f64>>],
        alpha: f64,
    ) -> Result<(LossTerms, Vec<Tensor>)> {
        if samples.is_empty() {
            return Err(Error::Empty("autoencoder training set"));
        }
        let objective = self.objective(samples)?;
        objective_and_gradient("autoencoder", &self.params, alpha, &objective)
    }

    fn objective<'a>(
        &'a self,
        samples: &[Vec<Vec<f64>>],
    ) -> Result<impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'a> {
        let mats = self.group_matrices(samples)?;
        let target = Tensor::from_rows(&samples.iter().map(|s| s.concat()).collect::<Vec<_>>())?;
        Ok(move |tape: &mut Tape, vars: &[Var]| {
            let inputs: Vec<Var> = mats.iter().map(|m| tape.constant(m.clone())).collect();
            let z = self.encode_graph(tape, vars, &inputs)?;
            let outs = self.decode_graph(tape, vars, z)?;
            let recon = if outs.len() == 1 {
                outs[0]
            } else {
                tape.concat_cols(&outs)?
            };
            let t = tape.constant(target.clone());
            tape.mse(recon, t)
        })
    }
}

/// Encode one configuration.
pub fn ae_encode(
    ae: &Autoencoder,
    spec: &FnnSpec,
    theta: &ConfigSnapshot,
) -> Result<LatentFeature> {
    theta.check(spec)?;
    if ae.spec().input_sizes != spec.branch_sizes() {
        return Err(Error::SpecMismatch {
            expected: format!("groups {:?}", ae.spec().input_sizes),
            found: format!("{:?}", spec.branch_sizes()),
        });
    }
    Ok(ae.encode_batch(&[theta.branch_vectors(spec)])?.remove(0))
}

/// Decode one latent feature into a configuration for `stage_index`.
pub fn ae_decode(
    ae: &Autoencoder,
    spec: &FnnSpec,
    latent: &LatentFeature,
    stage_index: usize,
) -> Result<ConfigSnapshot> {
    let groups = ae.decode_batch(std::slice::from_ref(latent))?.remove(0);
    ConfigSnapshot::from_branches(spec, stage_index, &groups)
}

/// Train the joint autoencoder on stored configurations.
pub fn ae_train(
    spec: &FnnSpec,
    snapshots: &[ConfigSnapshot],
    latent_dim: usize,
    cfg: &TrainConfig,
) -> Result<(Autoencoder, TrainLog)> {
    if snapshots.len() < 2 {
        return Err(Error::InsufficientHistory {
            needed: 2,
            have: snapshots.len(),
        });
    }
    for s in snapshots {
        s.check(spec)?;
    }
    let samples: Vec<Vec<Vec<f64>>> = snapshots.iter().map(|s| s.branch_vectors(spec)).collect();
    Autoencoder::train(
        AutoencoderSpec::joint(spec.branch_sizes(), latent_dim),
        &samples,
        cfg,
    )
}
