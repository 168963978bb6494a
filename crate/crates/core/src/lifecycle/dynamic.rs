//! The dynamic model: autoencoder(s) over stored configurations plus
//! forecaster(s) over their latent features.

use std::ops::Range;

use super::config::{AeMode, AeScaling, LifecycleConfig};
use crate::autodiff::derive_seed;
use crate::error::{Error, Result};
use crate::networks::{
    forecaster_train, forecaster_train_from, Autoencoder, AutoencoderSpec, ConfigSnapshot, FnnSpec,
    Forecaster, ForecasterSpec, LatentFeature,
};
use crate::train::TrainLog;

/// One autoencoder/forecaster pair covering a contiguous range of
/// parameter groups.
#[derive(Clone, Debug)]
pub struct Channel {
    pub groups: Range<usize>,
    /// Per-parameter scaling applied before encoding and undone after
    /// decoding; identity when standardization is off.
    pub scaling: Standardizer,
    /// Per-dimension scaling of latent features seen by the forecaster.
    pub latent_scaling: Standardizer,
    pub autoencoder: Autoencoder,
    pub forecaster: Forecaster,
    pub autoencoder_log: TrainLog,
    pub forecaster_log: TrainLog,
}

#[derive(Clone, Debug)]
pub struct DynamicModel {
    pub mode: AeMode,
    pub channels: Vec<Channel>,
    /// Stage of the newest configuration it was trained on.
    pub trained_through: usize,
}

/// Group ranges handled by each channel.
pub fn channel_groups(spec: &FnnSpec, mode: AeMode) -> Vec<Range<usize>> {
    let n = spec.branch_sizes().len();
    match mode {
        #[allow(clippy::single_range_in_vec_init)]
        AeMode::Joint => vec![0..n],
        AeMode::PerLayer => (0..n).map(|g| g..g + 1).collect(),
    }
}

fn channel_samples(
    spec: &FnnSpec,
    snapshots: &[ConfigSnapshot],
    groups: &Range<usize>,
) -> Vec<Vec<Vec<f64>>> {
    snapshots
        .iter()
        .map(|s| s.branch_vectors(spec)[groups.clone()].to_vec())
        .collect()
}

/// Per-coordinate affine map `z = (x - mean) / scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Spreads below this are treated as constant coordinates (scale 1).
const MIN_SCALE: f64 = 1e-12;

impl Standardizer {
    pub fn identity(width: usize) -> Self {
        Standardizer {
            mean: vec![0.0; width],
            scale: vec![1.0; width],
        }
    }

    /// Mean and population standard deviation of every coordinate.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty("standardizer input"))?;
        let n = rows.len() as f64;
        let width = first.len();
        let mut mean = vec![0.0; width];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; width];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > MIN_SCALE {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, scale })
    }

    /// Per-coordinate mean with one shared scale: the RMS deviation over
    /// every coordinate and row. Keeps the relative geometry of the rows.
    pub fn fit_centered(rows: &[Vec<f64>]) -> Result<Self> {
        let mut s = Self::fit(rows)?;
        let n = (rows.len() * s.mean.len()) as f64;
        let ss: f64 = rows
            .iter()
            .flat_map(|r| r.iter().zip(&s.mean).map(|(v, m)| (v - m) * (v - m)))
            .sum();
        let rms = (ss / n).sqrt();
        let shared = if rms > MIN_SCALE { rms } else { 1.0 };
        s.scale.iter_mut().for_each(|v| *v = shared);
        Ok(s)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| m + v * s)
            .collect()
    }

    fn apply_groups(&self, groups: &[Vec<f64>]) -> Vec<Vec<f64>> {
        split_like(&self.apply(&groups.concat()), groups.iter().map(Vec::len))
    }

    fn invert_groups(&self, groups: &[Vec<f64>]) -> Vec<Vec<f64>> {
        split_like(&self.invert(&groups.concat()), groups.iter().map(Vec::len))
    }
}

fn split_like(flat: &[f64], sizes: impl Iterator<Item = usize>) -> Vec<Vec<f64>> {
    let mut start = 0;
    sizes
        .map(|n| {
            let part = flat[start..start + n].to_vec();
            start += n;
            part
        })
        .collect()
}

/// Roll a window forward `horizon` times, feeding each prediction back in.
///
/// `history` must hold at least `window` features; only its last `window`
/// entries are used.
pub fn progressive_rollout<F>(
    history: &[LatentFeature],
    window: usize,
    horizon: usize,
    mut predict: F,
) -> Result<Vec<LatentFeature>>
where
    F: FnMut(&[LatentFeature]) -> Result<LatentFeature>,
{
    if window == 0 || history.len() < window {
        return Err(Error::InsufficientHistory {
            needed: window.max(1),
            have: history.len(),
        });
    }
    let mut buf: Vec<LatentFeature> = history[history.len() - window..].to_vec();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let next = predict(&buf[buf.len() - window..])?;
        buf.push(next.clone());
        out.push(next);
    }
    Ok(out)
}

impl DynamicModel {
    /// Train channels on every stored configuration.
    ///
    /// With `previous` set, each channel continues from the previous model's
    /// weights (with a fresh optimizer); otherwise it starts from an
    /// initialization seeded by `cfg.seed` and the newest stage.
    pub fn train(
        spec: &FnnSpec,
        snapshots: &[ConfigSnapshot],
        latent_dims: &[usize],
        cfg: &LifecycleConfig,
        previous: Option<&DynamicModel>,
    ) -> Result<Self> {
        let last = snapshots
            .last()
            .ok_or(Error::Empty("configuration history"))?;
        if snapshots.len() < cfg.window_w + 1 {
            return Err(Error::InsufficientHistory {
                needed: cfg.window_w + 1,
                have: snapshots.len(),
            });
        }
        let groups = channel_groups(spec, cfg.ae_mode);
        if latent_dims.len() != groups.len() {
            return Err(Error::InvalidConfig(format!(
                "{} latent widths for {} channels",
                latent_dims.len(),
                groups.len()
            )));
        }
        if let Some(prev) = previous {
            if prev.mode != cfg.ae_mode || prev.channels.len() != groups.len() {
                return Err(Error::InvalidConfig(
                    "previous dynamic model has a different channel layout".into(),
                ));
            }
        }
        let sizes = spec.branch_sizes();
        let step_seed = derive_seed(cfg.seed, 0x0D1A_0000 + last.stage_index as u64);
        let mut channels = Vec::with_capacity(groups.len());
        for (c, (range, &latent)) in groups.into_iter().zip(latent_dims).enumerate() {
            let ae_spec = match cfg.ae_mode {
                AeMode::Joint => AutoencoderSpec::joint_with_width(
                    sizes[range.clone()].to_vec(),
                    latent,
                    cfg.compression_width,
                ),
                AeMode::PerLayer => AutoencoderSpec::tapered(sizes[range.start], latent),
            };
            let raw = channel_samples(spec, snapshots, &range);
            let rows: Vec<Vec<f64>> = raw.iter().map(|g| g.concat()).collect();
            let scaling = match cfg.scaling {
                AeScaling::None => Standardizer::identity(rows[0].len()),
                AeScaling::PerParameter => Standardizer::fit(&rows)?,
                AeScaling::Centered => Standardizer::fit_centered(&rows)?,
            };
            let samples: Vec<Vec<Vec<f64>>> = raw.iter().map(|g| scaling.apply_groups(g)).collect();
            let ae_cfg = cfg
                .autoencoder
                .with_seed(derive_seed(step_seed, 2 * c as u64));
            let prev = previous.map(|p| &p.channels[c]);
            let (autoencoder, autoencoder_log) = match prev {
                Some(p) if p.autoencoder.spec() == &ae_spec => {
                    p.autoencoder.clone().train_from(&samples, &ae_cfg)?
                }
                _ => Autoencoder::train(ae_spec, &samples, &ae_cfg)?,
            };
            let encoded = autoencoder.encode_batch(&samples)?;
            let latent_scaling = if cfg.latent_scaling {
                Standardizer::fit(&encoded.iter().map(|f| f.0.clone()).collect::<Vec<_>>())?
            } else {
                Standardizer::identity(latent)
            };
            let features: Vec<LatentFeature> = encoded
                .iter()
                .map(|f| LatentFeature(latent_scaling.apply(&f.0)))
                .collect();
            let fc_spec = ForecasterSpec::of_kind(cfg.forecaster, latent, cfg.window_w);
            let fc_cfg = cfg
                .forecaster_training
                .with_seed(derive_seed(step_seed, 2 * c as u64 + 1));
            let (forecaster, forecaster_log) = match prev {
                Some(p) if p.forecaster.spec() == &fc_spec => {
                    forecaster_train_from(p.forecaster.clone(), &features, &fc_cfg)?
                }
                _ => forecaster_train(&features, fc_spec, &fc_cfg)?,
            };
            channels.push(Channel {
                groups: range,
                scaling,
                latent_scaling,
                autoencoder,
                forecaster,
                autoencoder_log,
                forecaster_log,
            });
        }
        Ok(DynamicModel {
            mode: cfg.ae_mode,
            channels,
            trained_through: last.stage_index,
        })
    }

    pub fn window(&self) -> usize {
        self.channels[0].forecaster.spec().window
    }

    /// Generate configurations for the `horizon` stages after the newest
    /// entry of `history`, starting from encodings of its last `w` entries.
    pub fn rollout(
        &self,
        spec: &FnnSpec,
        history: &[ConfigSnapshot],
        horizon: usize,
    ) -> Result<Vec<ConfigSnapshot>> {
        let last = history
            .last()
            .ok_or(Error::Empty("configuration history"))?;
        let w = self.window();
        if history.len() < w {
            return Err(Error::InsufficientHistory {
                needed: w,
                have: history.len(),
            });
        }
        let recent = &history[history.len() - w..];
        let mut per_step: Vec<Vec<Vec<f64>>> = vec![Vec::new(); horizon];
        for ch in &self.channels {
            let samples: Vec<Vec<Vec<f64>>> = channel_samples(spec, recent, &ch.groups)
                .iter()
                .map(|g| ch.scaling.apply_groups(g))
                .collect();
            let features: Vec<LatentFeature> = ch
                .autoencoder
                .encode_batch(&samples)?
                .iter()
                .map(|f| LatentFeature(ch.latent_scaling.apply(&f.0)))
                .collect();
            let predicted: Vec<LatentFeature> =
                progressive_rollout(&features, w, horizon, |win| ch.forecaster.predict(win))?
                    .iter()
                    .map(|f| LatentFeature(ch.latent_scaling.invert(&f.0)))
                    .collect();
            if horizon == 0 {
                continue;
            }
            for (k, groups) in ch
                .autoencoder
                .decode_batch(&predicted)?
                .into_iter()
                .enumerate()
            {
                per_step[k].extend(ch.scaling.invert_groups(&groups));
            }
        }
        per_step
            .iter()
            .enumerate()
            .map(|(k, branches)| {
                ConfigSnapshot::from_branches(spec, last.stage_index + 1 + k, branches)
            })
            .collect()
    }
}
