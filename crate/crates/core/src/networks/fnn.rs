//! Feedforward digital-twin models and their flattened configurations.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{init_linear, linear_stack};
use crate::autodiff::{Rng, Tape, Tensor, Var};
use crate::data::StageDataset;
use crate::error::{Error, Result};
use crate::train::{objective_and_gradient, train, LossTerms, TrainConfig, TrainLog};

/// Layer widths `[N_in, h_1, ..., h_N, N_out]` of a tanh FNN with a linear
/// output layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FnnSpec {
    layer_dims: Vec<usize>,
}

impl FnnSpec {
    pub fn new(layer_dims: Vec<usize>) -> Result<Self> {
        if layer_dims.len() < 3 {
            return Err(Error::InvalidConfig(format!(
                "an FNN needs at least one hidden layer, got dims {layer_dims:?}"
            )));
        }
        if layer_dims.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "layer widths must be >= 1, got {layer_dims:?}"
            )));
        }
        Ok(FnnSpec { layer_dims })
    }

    /// `[2, 6, 6, 6, 6, 1]`: inputs (current, time), output voltage. 151 parameters.
    pub fn battery() -> Self {
        FnnSpec {
            layer_dims: vec![2, 6, 6, 6, 6, 1],
        }
    }

    /// `[5, 32 x 7, 1]`: inputs (alt, Mach, TRA, T2, t), output pressure. 6561 parameters.
    pub fn engine() -> Self {
        let mut dims = vec![5];
        dims.extend(std::iter::repeat_n(32, 7));
        dims.push(1);
        FnnSpec { layer_dims: dims }
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Number of hidden layers `N`.
    pub fn hidden_layers(&self) -> usize {
        self.layer_dims.len() - 2
    }

    /// Number of affine maps (`N + 1`, including the output layer).
    pub fn linear_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    /// `(n_in + 1) * n_out` for affine map `i`.
    pub fn layer_param_count(&self, i: usize) -> usize {
        (self.layer_dims[i] + 1) * self.layer_dims[i + 1]
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        (0..self.linear_layers())
            .map(|i| self.layer_param_count(i))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes().iter().sum()
    }

    /// Sizes of the `N` parameter groups fed to the autoencoder.
    ///
    /// Group `i < N-1` is hidden layer `i`'s affine map; the last group is
    /// the last hidden layer's map followed by the output map, so the groups
    /// cover every parameter while their count equals the hidden-layer count.
    pub fn branch_sizes(&self) -> Vec<usize> {
        let mut sizes = self.layer_sizes();
        let out = sizes.pop().unwrap();
        *sizes.last_mut().unwrap() += out;
        sizes
    }

    /// Layer index ranges making up each branch.
    pub(crate) fn branch_layers(&self) -> Vec<std::ops::Range<usize>> {
        let n = self.hidden_layers();
        (0..n)
            .map(|i| if i + 1 == n { i..i + 2 } else { i..i + 1 })
            .collect()
    }

    /// Stable identifier binding snapshots to this spec.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"fnn-tanh-linear-out:");
        for d in &self.layer_dims {
            h.update((*d as u64).to_le_bytes());
        }
        h.finalize()[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Flatten one affine map: weight rows in order, then the bias.
pub fn flatten_layer(weight: &Tensor, bias: &Tensor) -> Result<Vec<f64>> {
    if !weight.is_matrix() || bias.len() != weight.shape()[0] {
        return Err(Error::shape(
            "flatten_layer",
            format!("weight {:?} with bias {:?}", weight.shape(), bias.shape()),
        ));
    }
    let mut v = Vec::with_capacity(weight.len() + bias.len());
    v.extend_from_slice(weight.data());
    v.extend_from_slice(bias.data());
    Ok(v)
}

/// Inverse of [`flatten_layer`] for an `n_in -> n_out` map.
pub fn unflatten_layer(flat: &[f64], n_in: usize, n_out: usize) -> Result<(Tensor, Tensor)> {
    if flat.len() != (n_in + 1) * n_out {
        return Err(Error::shape(
            "unflatten_layer",
            format!("{} values for a {n_in}->{n_out} layer", flat.len()),
        ));
    }
    let w = Tensor::matrix(n_out, n_in, flat[..n_in * n_out].to_vec())?;
    let b = Tensor::vector(flat[n_in * n_out..].to_vec());
    Ok((w, b))
}

/// Flattened FNN parameters at one degradation stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub stage_index: usize,
    /// One flat vector per affine map, see [`flatten_layer`].
    pub layers: Vec<Vec<f64>>,
    pub spec_hash: String,
}

impl ConfigSnapshot {
    pub fn zeros(spec: &FnnSpec, stage_index: usize) -> Self {
        ConfigSnapshot {
            stage_index,
            layers: spec
                .layer_sizes()
                .into_iter()
                .map(|n| vec![0.0; n])
                .collect(),
            spec_hash: spec.hash(),
        }
    }

    /// Fresh initialization, uniform in `+-1/sqrt(fan_in)` per layer.
    pub fn seeded(spec: &FnnSpec, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let params: Vec<Tensor> = (0..spec.linear_layers())
            .flat_map(|i| {
                let (w, b) = init_linear(&mut rng, spec.layer_dims[i], spec.layer_dims[i + 1]);
                [w, b]
            })
            .collect();
        Self::from_params(spec, 0, &params).expect("shapes come from the spec")
    }

    pub fn from_params(spec: &FnnSpec, stage_index: usize, params: &[Tensor]) -> Result<Self> {
        if params.len() != 2 * spec.linear_layers() {
            return Err(Error::shape(
                "snapshot",
                format!(
                    "{} tensors for {} layers",
                    params.len(),
                    spec.linear_layers()
                ),
            ));
        }
        let layers = params
            .chunks(2)
            .map(|wb| flatten_layer(&wb[0], &wb[1]))
            .collect::<Result<Vec<_>>>()?;
        let snap = ConfigSnapshot {
            stage_index,
            layers,
            spec_hash: spec.hash(),
        };
        snap.check(spec)?;
        Ok(snap)
    }

    /// `[W_1, b_1, W_2, b_2, ...]`.
    pub fn to_params(&self, spec: &FnnSpec) -> Result<Vec<Tensor>> {
        self.check(spec)?;
        let dims = spec.layer_dims();
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (i, flat) in self.layers.iter().enumerate() {
            let (w, b) = unflatten_layer(flat, dims[i], dims[i + 1])?;
            out.push(w);
            out.push(b);
        }
        Ok(out)
    }

    pub fn check(&self, spec: &FnnSpec) -> Result<()> {
        if self.spec_hash != spec.hash() {
            return Err(Error::SpecMismatch {
                expected: spec.hash(),
                found: self.spec_hash.clone(),
            });
        }
        let sizes = spec.layer_sizes();
        let actual: Vec<usize> = self.layers.iter().map(Vec::len).collect();
        if actual != sizes {
            return Err(Error::SpecMismatch {
                expected: format!("layer sizes {sizes:?}"),
                found: format!("{actual:?}"),
            });
        }
        Ok(())
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers.concat()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn from_flat(spec: &FnnSpec, stage_index: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != spec.param_count() {
            return Err(Error::SpecMismatch {
                expected: format!("{} parameters", spec.param_count()),
                found: format!("{}", flat.len()),
            });
        }
        let mut layers = Vec::with_capacity(spec.linear_layers());
        let mut start = 0;
        for n in spec.layer_sizes() {
            layers.push(flat[start..start + n].to_vec());
            start += n;
        }
        Ok(ConfigSnapshot {
            stage_index,
            layers,
            spec_hash: spec.hash(),
        })
    }

    /// Parameter groups in the order the autoencoder consumes them.
    pub fn branch_vectors(&self, spec: &FnnSpec) -> Vec<Vec<f64>> {
        spec.branch_layers()
            .into_iter()
            .map(|r| self.layers[r].concat())
            .collect()
    }

    pub fn from_branches(
        spec: &FnnSpec,
        stage_index: usize,
        branches: &[Vec<f64>],
    ) -> Result<Self> {
        let sizes = spec.branch_sizes();
        let actual: Vec<usize> = branches.iter().map(Vec::len).collect();
        if actual != sizes {
            return Err(Error::SpecMismatch {
                expected: format!("branch sizes {sizes:?}"),
                found: format!("{actual:?}"),
            });
        }
        Self::from_flat(spec, stage_index, &branches.concat())
    }

    pub fn sum_squares(&self) -> f64 {
        self.layers.iter().flatten().map(|v| v * v).sum()
    }
}

/// Record the FNN forward pass on `tape`.
pub(crate) fn fnn_graph(tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
    let layers: Vec<(Var, Var, bool)> = params
        .chunks(2)
        .enumerate()
        .map(|(i, wb)| (wb[0], wb[1], i + 1 < params.len() / 2))
        .collect();
    linear_stack(tape, x, &layers)
}

/// Evaluate the DT model `theta` on inputs `x` (`n x N_in`).
pub fn fnn_forward(spec: &FnnSpec, theta: &ConfigSnapshot, x: &Tensor) -> Result<Tensor> {
    if !x.is_matrix() || x.cols() != spec.input_dim() {
        return Err(Error::shape(
            "fnn_forward",
            format!("inputs {:?} for N_in = {}", x.shape(), spec.input_dim()),
        ));
    }
    let params = theta.to_params(spec)?;
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.into_iter().map(|p| tape.constant(p)).collect();
    let xv = tape.constant(x.clone());
    let y = fnn_graph(&mut tape, &vars, xv)?;
    Ok(tape.value(y)?.clone())
}

fn check_dataset(spec: &FnnSpec, data: &StageDataset, op: &'static str) -> Result<()> {
    if data.x.cols() != spec.input_dim() || data.y.cols() != spec.output_dim() {
        return Err(Error::shape(
            op,
            format!(
                "dataset is {}->{}, spec is {}->{}",
                data.x.cols(),
                data.y.cols(),
                spec.input_dim(),
                spec.output_dim()
            ),
        ));
    }
    Ok(())
}

fn fnn_objective(data: &StageDataset) -> impl Fn(&mut Tape, &[Var]) -> Result<Var> + '_ {
    move |tape, vars| {
        let x = tape.constant(data.x.clone());
        let y = tape.constant(data.y.clone());
        let pred = fnn_graph(tape, vars, x)?;
        tape.mse(pred, y)
    }
}

/// Training objective `mse + alpha * ||theta||^2` on `data` and its
/// gradient, one tensor per weight/bias in layer order.
pub fn fnn_loss_and_gradient(
    spec: &FnnSpec,
    data: &StageDataset,
    theta: &ConfigSnapshot,
    alpha: f64,
) -> Result<(LossTerms, Vec<Tensor>)> {
    check_dataset(spec, data, "fnn_loss_and_gradient")?;
    let params = theta.to_params(spec)?;
    objective_and_gradient("dt-training", &params, alpha, &fnn_objective(data))
}

/// Train from `init` on all of `data` with full-batch Adam.
///
/// The objective is `mse + cfg.alpha * ||theta||^2`; `alpha = 0` gives plain MSE.
pub fn fnn_train(
    spec: &FnnSpec,
    data: &StageDataset,
    cfg: &TrainConfig,
    init: &ConfigSnapshot,
) -> Result<(ConfigSnapshot, TrainLog)> {
    check_dataset(spec, data, "fnn_train")?;
    let mut params = init.to_params(spec)?;
    let log = train("dt-training", &mut params, cfg, fnn_objective(data))?;
    let snap = ConfigSnapshot::from_params(spec, data.stage_index, &params)?;
    Ok((snap, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_counts() {
        assert_eq!(FnnSpec::battery().param_count(), 151);
        assert_eq!(FnnSpec::engine().param_count(), 6561);
        assert_eq!(FnnSpec::battery().hidden_layers(), 4);
        assert_eq!(FnnSpec::engine().hidden_layers(), 7);
        let s = FnnSpec::new(vec![2, 3, 1]).unwrap();
        assert_eq!(s.layer_param_count(0), 9);
        assert!(FnnSpec::new(vec![2, 1]).is_err());
        assert!(FnnSpec::new(vec![2, 0, 1]).is_err());
    }

    #[test]
    fn branches_cover_all_parameters() {
        let s = FnnSpec::battery();
        assert_eq!(s.branch_sizes(), vec![18, 42, 42, 49]);
        assert_eq!(s.branch_sizes().iter().sum::<usize>(), 151);
        assert_eq!(FnnSpec::engine().branch_sizes().len(), 7);
    }

    #[test]
    fn flatten_layout() {
        let w = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::vector(vec![7.0, 8.0, 9.0]);
        let flat = flatten_layer(&w, &b).unwrap();
        assert_eq!(flat, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let (w2, b2) = unflatten_layer(&flat, 2, 3).unwrap();
        assert_eq!(w2, w);
        assert_eq!(b2, b);
        assert!(unflatten_layer(&flat, 3, 3).is_err());
    }

    #[test]
    fn zero_snapshot_is_zero_function() {
        let spec = FnnSpec::battery();
        let theta = ConfigSnapshot::zeros(&spec, 0);
        let x = Tensor::matrix(3, 2, vec![0.74, 0.1, 0.74, 0.5, -3.0, 9.0]).unwrap();
        let y = fnn_forward(&spec, &theta, &x).unwrap();
        assert_eq!(y.shape(), &[3, 1]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_shapes() {
        let spec = FnnSpec::battery();
        let theta = ConfigSnapshot::seeded(&spec, 3);
        let y = fnn_forward(&spec, &theta, &Tensor::zeros(&[200, 2])).unwrap();
        assert_eq!(y.shape(), &[200, 1]);
        let espec = FnnSpec::engine();
        let etheta = ConfigSnapshot::seeded(&espec, 3);
        let y = fnn_forward(&espec, &etheta, &Tensor::zeros(&[17, 5])).unwrap();
        assert_eq!(y.shape(), &[17, 1]);
        assert!(fnn_forward(&spec, &etheta, &Tensor::zeros(&[1, 2])).is_err());
        assert!(fnn_forward(&spec, &theta, &Tensor::zeros(&[1, 5])).is_err());
    }

    #[test]
    fn snapshot_round_trips() {
        let spec = FnnSpec::battery();
        let theta = ConfigSnapshot::seeded(&spec, 9);
        let params = theta.to_params(&spec).unwrap();
        let back = ConfigSnapshot::from_params(&spec, 0, &params).unwrap();
        assert_eq!(back, theta);
        let branches = theta.branch_vectors(&spec);
        assert_eq!(
            ConfigSnapshot::from_branches(&spec, 0, &branches).unwrap(),
            theta
        );
        assert_eq!(
            ConfigSnapshot::from_flat(&spec, 0, &theta.flat()).unwrap(),
            theta
        );
    }

    #[test]
    fn seeded_init_bounds() {
        let spec = FnnSpec::battery();
        let theta = ConfigSnapshot::seeded(&spec, 1);
        for (i, layer) in theta.layers.iter().enumerate() {
            let bound = 1.0 / (spec.layer_dims()[i] as f64).sqrt();
            assert!(layer.iter().all(|v| v.abs() <= bound));
        }
        assert_eq!(theta, ConfigSnapshot::seeded(&spec, 1));
        assert_ne!(theta, ConfigSnapshot::seeded(&spec, 2));
    }
}
