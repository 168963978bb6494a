//! Shared oracles for the integration tests: central finite differences and
//! seeded random problem instances for every trainable network family.

#![allow(dead_code)]

use lifelong_dt::autodiff::{Rng, Tensor};
use lifelong_dt::data::{Column, StageDataset};
use lifelong_dt::networks::{
    fnn_forward, fnn_loss_and_gradient, Autoencoder, AutoencoderSpec, ConfigSnapshot, FnnSpec,
    Forecaster, ForecasterSpec, LatentFeature,
};

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Weight of the l2 term in every checked objective.
pub const FD_ALPHA: f64 = 1e-5;
/// Targets are the model's own output plus a uniform offset of this
/// amplitude. The loss stays small, so the round-off floor of the
/// central difference (about ulp(loss) / 2h) sits well below the gradients
/// being checked.
pub const TARGET_OFFSET: f64 = 0.1;
/// Compression width used for joint autoencoders in the gradient suite;
/// the trunk shape is the production one, only narrower.
pub const FD_COMPRESSION_WIDTH: usize = 8;
/// Smallest allowed distance between any ReLU input and its kink, ten
/// difference steps.
pub const KINK_MARGIN: f64 = 10.0 * FD_STEP;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Largest relative error between `analytic` and a central difference of
/// `loss` over every scalar in `params`.
pub fn fd_max_rel_error(
    params: &[Tensor],
    analytic: &[Tensor],
    loss: impl Fn(&[Tensor]) -> f64,
) -> f64 {
    assert_eq!(params.len(), analytic.len());
    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for t in 0..params.len() {
        assert_eq!(params[t].shape(), analytic[t].shape());
        for i in 0..params[t].len() {
            let orig = params[t].data()[i];
            work[t].data_mut()[i] = orig + FD_STEP;
            let plus = loss(&work);
            work[t].data_mut()[i] = orig - FD_STEP;
            let minus = loss(&work);
            work[t].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[t].data()[i], numeric));
        }
    }
    worst
}

fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.uniform(-1.0, 1.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn pick(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    // Inclusive range.
    lo + (rng.uniform(0.0, (hi - lo + 1) as f64) as usize).min(hi - lo)
}

/// FNN with 1-3 hidden layers on a random dataset, checked with a nonzero
/// l2 weight so both objective terms are exercised.
pub fn fnn_gradient_error(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let hidden = pick(&mut rng, 1, 3);
    let mut dims = vec![pick(&mut rng, 1, 3)];
    for _ in 0..hidden {
        dims.push(pick(&mut rng, 2, 6));
    }
    dims.push(pick(&mut rng, 1, 2));
    let spec = FnnSpec::new(dims).unwrap();
    let n = 7;
    let theta = ConfigSnapshot::seeded(&spec, seed ^ 0xF00D);
    let x = random_matrix(&mut rng, n, spec.input_dim());
    let mut y = fnn_forward(&spec, &theta, &x).unwrap();
    for v in y.data_mut() {
        *v += TARGET_OFFSET * rng.uniform(-1.0, 1.0);
    }
    let cols = |d: usize| (0..d).map(|i| Column::new(&format!("c{i}"), "")).collect();
    let data = StageDataset::new(0, x, y, cols(spec.input_dim()), cols(spec.output_dim())).unwrap();
    let alpha = FD_ALPHA;
    let (_, grads) = fnn_loss_and_gradient(&spec, &data, &theta, alpha).unwrap();
    let params = theta.to_params(&spec).unwrap();
    fd_max_rel_error(&params, &grads, |p| {
        let t = ConfigSnapshot::from_params(&spec, 0, p).unwrap();
        fnn_loss_and_gradient(&spec, &data, &t, alpha)
            .unwrap()
            .0
            .total
    })
}

/// Joint (N = 1-3 groups) or tapered autoencoder with L <= 6.
pub fn autoencoder_gradient_error(seed: u64, joint: bool) -> f64 {
    let mut rng = Rng::new(seed);
    let latent = pick(&mut rng, 1, 6);
    let spec = if joint {
        let groups = pick(&mut rng, 1, 3);
        let sizes = (0..groups).map(|_| pick(&mut rng, 2, 9)).collect();
        AutoencoderSpec::joint_with_width(sizes, latent, FD_COMPRESSION_WIDTH)
    } else {
        AutoencoderSpec::tapered(pick(&mut rng, 4, 20), latent)
    };
    let ae = Autoencoder::new(spec.clone(), seed ^ 0xAE).unwrap();
    // Reconstruction targets are the inputs themselves, so draw samples
    // around an approximate fixed point of the reconstruction map.
    let mut center: Vec<Vec<f64>> = spec
        .input_sizes
        .iter()
        .map(|&s| (0..s).map(|_| rng.uniform(-1.0, 1.0)).collect())
        .collect();
    for _ in 0..50 {
        let z = ae.encode_batch(&[center]).unwrap();
        center = ae.decode_batch(&z).unwrap().remove(0);
    }
    let samples: Vec<Vec<Vec<f64>>> = (0..4)
        .map(|_| {
            center
                .iter()
                .map(|g| {
                    g.iter()
                        .map(|v| v + TARGET_OFFSET * rng.uniform(-1.0, 1.0))
                        .collect()
                })
                .collect()
        })
        .collect();
    let alpha = FD_ALPHA;
    let (_, grads) = ae.loss_and_gradient(&samples, alpha).unwrap();
    fd_max_rel_error(ae.params(), &grads, |p| {
        Autoencoder::from_params(spec.clone(), p.to_vec())
            .unwrap()
            .loss_and_gradient(&samples, alpha)
            .unwrap()
            .0
            .total
    })
}

/// LSTM or Transformer forecaster with w <= 3 and L <= 4.
pub fn forecaster_gradient_error(seed: u64, transformer: bool) -> f64 {
    let mut rng = Rng::new(seed);
    let latent = pick(&mut rng, 1, 4);
    let window = pick(&mut rng, 1, 3);
    let spec = if transformer {
        ForecasterSpec::transformer(latent, window)
    } else {
        ForecasterSpec::lstm(latent, window)
    };
    // Redraw instances whose objective sits within KINK_MARGIN of a ReLU
    // kink: there the loss is not differentiable on the difference stencil.
    let mut attempt = 0u64;
    let (model, features) = loop {
        let model = Forecaster::new(spec.clone(), seed ^ 0xFC ^ (attempt << 32)).unwrap();
        let features = forecaster_sequence(&model, &mut rng, latent, window);
        if model.relu_margin(&features).unwrap() >= KINK_MARGIN {
            break (model, features);
        }
        attempt += 1;
    };
    let alpha = FD_ALPHA;
    let (_, grads) = model.loss_and_gradient(&features, alpha).unwrap();
    let base = model.params().to_vec();
    fd_max_rel_error(&base, &grads, |p| {
        let mut m = model.clone();
        for (dst, src) in m.params_mut().iter_mut().zip(p) {
            dst.data_mut().copy_from_slice(src.data());
        }
        m.loss_and_gradient(&features, alpha).unwrap().0.total
    })
}

/// A random initial window continued by the model's own forecasts plus a
/// small offset.
fn forecaster_sequence(
    model: &Forecaster,
    rng: &mut Rng,
    latent: usize,
    window: usize,
) -> Vec<LatentFeature> {
    let mut features: Vec<LatentFeature> = (0..window)
        .map(|_| LatentFeature((0..latent).map(|_| rng.uniform(-1.0, 1.0)).collect()))
        .collect();
    for _ in 0..3 {
        let next = model.predict(&features[features.len() - window..]).unwrap();
        features.push(LatentFeature(
            next.0
                .iter()
                .map(|v| v + TARGET_OFFSET * rng.uniform(-1.0, 1.0))
                .collect(),
        ));
    }
    features
}

/// Named check returning the maximum relative error for one seed.
pub type GradientFamily = (&'static str, fn(u64) -> f64);

/// Every gradient family with its per-seed maximum relative error.
pub fn gradient_families() -> Vec<GradientFamily> {
    vec![
        ("fnn", fnn_gradient_error),
        ("autoencoder-joint", |s| autoencoder_gradient_error(s, true)),
        ("autoencoder-tapered", |s| {
            autoencoder_gradient_error(s, false)
        }),
        ("lstm", |s| forecaster_gradient_error(s, false)),
        ("transformer", |s| forecaster_gradient_error(s, true)),
    ]
}
