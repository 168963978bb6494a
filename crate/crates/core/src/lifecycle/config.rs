use serde::{Deserialize, Serialize};

use crate::entropy::EntropyConfig;
use crate::error::{Error, Result};
use crate::networks::{ForecasterKind, DEFAULT_COMPRESSION_WIDTH};
use crate::train::TrainConfig;

/// How configurations are split across autoencoders.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AeMode {
    /// One autoencoder over every parameter group.
    Joint,
    /// One tapered autoencoder and one forecaster per parameter group.
    PerLayer,
}

impl std::fmt::Display for AeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AeMode::Joint => "joint",
            AeMode::PerLayer => "per-layer",
        })
    }
}

impl std::str::FromStr for AeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "joint" => Ok(AeMode::Joint),
            "per-layer" | "per_layer" | "perlayer" => Ok(AeMode::PerLayer),
            other => Err(Error::InvalidConfig(format!(
                "unknown autoencoder mode '{other}'"
            ))),
        }
    }
}

/// How stored configurations are scaled before autoencoding. The scaling
/// is fit on the configurations the dynamic model is trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AeScaling {
    /// Raw parameter values.
    None,
    /// Per-parameter mean and standard deviation.
    PerParameter,
    /// Per-parameter mean, one shared RMS scale.
    Centered,
}

impl std::fmt::Display for AeScaling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AeScaling::None => "none",
            AeScaling::PerParameter => "per-parameter",
            AeScaling::Centered => "centered",
        })
    }
}

impl std::str::FromStr for AeScaling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "raw" => Ok(AeScaling::None),
            "per-parameter" => Ok(AeScaling::PerParameter),
            "centered" => Ok(AeScaling::Centered),
            other => Err(Error::InvalidConfig(format!("unknown scaling '{other}'"))),
        }
    }
}

/// Every knob of a lifelong run.
///
/// The `seed` fields of the embedded [`TrainConfig`]s are ignored: each
/// phase derives its own seed from [`LifecycleConfig::seed`] and the stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifecycleConfig {
    /// Warm-up length `m`: stages fine-tuned before the first forecast.
    pub warmup_m: usize,
    /// Forecaster window `w`.
    pub window_w: usize,
    /// Trailing stages never used for training.
    pub holdout_tail: usize,
    /// Update steps skipped before collecting boxplot values.
    pub burn_in: usize,
    pub forecaster: ForecasterKind,
    pub ae_mode: AeMode,
    pub compression_width: usize,
    /// Continue each update step's dynamic model from the previous step's
    /// weights instead of a fresh initialization.
    pub warm_start: bool,
    /// Input scaling of the autoencoder(s).
    pub scaling: AeScaling,
    /// Standardize latent features per dimension before forecasting.
    pub latent_scaling: bool,
    pub entropy: EntropyConfig,
    /// DT_0 training.
    pub init: TrainConfig,
    /// Per-stage DT fine-tuning.
    pub fine_tune: TrainConfig,
    pub autoencoder: TrainConfig,
    pub forecaster_training: TrainConfig,
    pub seed: u64,
}

impl LifecycleConfig {
    /// Battery preset: `m = 20`, `w = 5`.
    pub fn battery() -> Self {
        LifecycleConfig {
            warmup_m: 20,
            window_w: 5,
            holdout_tail: 5,
            burn_in: 10,
            forecaster: ForecasterKind::Lstm,
            ae_mode: AeMode::Joint,
            compression_width: DEFAULT_COMPRESSION_WIDTH,
            warm_start: true,
            scaling: AeScaling::Centered,
            latent_scaling: true,
            entropy: EntropyConfig::default(),
            init: TrainConfig::new(1000, 5e-3, 0.0, 0),
            fine_tune: TrainConfig::new(10, 1e-3, 1e-5, 0),
            autoencoder: TrainConfig::new(1000, 1e-4, 1e-4, 0),
            forecaster_training: TrainConfig::new(1000, 1e-4, 1e-4, 0),
            seed: 0,
        }
    }

    /// Engine preset: battery preset with `m = 40`, `w = 10`.
    pub fn engine() -> Self {
        LifecycleConfig {
            warmup_m: 40,
            window_w: 10,
            ..Self::battery()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_w == 0 {
            return Err(Error::InvalidConfig("window w must be >= 1".into()));
        }
        if self.warmup_m < self.window_w + 1 {
            return Err(Error::InvalidConfig(format!(
                "warm-up m = {} must be at least w + 1 = {}",
                self.warmup_m,
                self.window_w + 1
            )));
        }
        if self.compression_width < 8 {
            return Err(Error::InvalidConfig(
                "compression width must be >= 8".into(),
            ));
        }
        self.entropy.validate()?;
        for cfg in [
            &self.init,
            &self.fine_tune,
            &self.autoencoder,
            &self.forecaster_training,
        ] {
            cfg.validate()?;
        }
        Ok(())
    }

    /// Index of the last stage whose data may be used for training, for a
    /// run with `stages` stages in total.
    pub fn last_training_stage(&self, stages: usize) -> Result<usize> {
        let needed = self.warmup_m + 1 + self.holdout_tail;
        if stages < needed {
            return Err(Error::InsufficientHistory {
                needed,
                have: stages,
            });
        }
        Ok(stages - 1 - self.holdout_tail)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        LifecycleConfig::battery().validate().unwrap();
        let e = LifecycleConfig::engine();
        e.validate().unwrap();
        assert_eq!((e.warmup_m, e.window_w), (40, 10));
    }

    #[test]
    fn warmup_must_cover_a_window() {
        let cfg = LifecycleConfig {
            warmup_m: 5,
            window_w: 5,
            ..LifecycleConfig::battery()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn last_training_stage_respects_holdout() {
        let cfg = LifecycleConfig::battery();
        assert_eq!(cfg.last_training_stage(40).unwrap(), 34);
        assert!(cfg.last_training_stage(25).is_err());
        assert_eq!(cfg.last_training_stage(26).unwrap(), 20);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("per-layer".parse::<AeMode>().unwrap(), AeMode::PerLayer);
        assert_eq!(AeMode::Joint.to_string(), "joint");
        assert!("both".parse::<AeMode>().is_err());
    }
}
