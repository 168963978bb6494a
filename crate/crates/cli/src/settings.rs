//! Run settings: presets overlaid by a flat `key = value` file, then flags.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use lifelong_dt::lifecycle::LifecycleConfig;
use lifelong_dt::networks::FnnSpec;
use lifelong_dt::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub spec: FnnSpec,
    pub lifecycle: LifecycleConfig,
}

pub const PRESETS: &[&str] = &["battery", "engine", "scaled-battery"];

impl Settings {
    pub fn preset(name: &str) -> Result<Self> {
        Ok(match name {
            "battery" => Settings {
                spec: FnnSpec::battery(),
                lifecycle: LifecycleConfig::battery(),
            },
            "engine" => Settings {
                spec: FnnSpec::engine(),
                lifecycle: LifecycleConfig::engine(),
            },
            // Shorter warm-up and dynamic-model training for quick runs.
            "scaled-battery" => {
                let mut lifecycle = LifecycleConfig::battery();
                lifecycle.warmup_m = 10;
                lifecycle.autoencoder.epochs = 300;
                lifecycle.forecaster_training.epochs = 300;
                Settings {
                    spec: FnnSpec::battery(),
                    lifecycle,
                }
            }
            other => bail!(
                "unknown preset '{other}' (expected one of {})",
                PRESETS.join(", ")
            ),
        })
    }

    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let c = &mut self.lifecycle;
        match key {
            "layer_dims" => {
                let dims = value
                    .split(',')
                    .map(|v| parse::<usize>(key, v))
                    .collect::<Result<Vec<_>>>()?;
                self.spec = FnnSpec::new(dims)?;
            }
            "warmup_m" => c.warmup_m = parse(key, value)?,
            "window_w" => c.window_w = parse(key, value)?,
            "holdout" => c.holdout_tail = parse(key, value)?,
            "burn_in" => c.burn_in = parse(key, value)?,
            "forecaster" => c.forecaster = parse(key, value)?,
            "ae_mode" => c.ae_mode = parse(key, value)?,
            "compression_width" => c.compression_width = parse(key, value)?,
            "scaling" => c.scaling = parse(key, value)?,
            "warm_start" => c.warm_start = parse(key, value)?,
            "latent_scaling" => c.latent_scaling = parse(key, value)?,
            "beta" => c.entropy.beta = parse(key, value)?,
            "a" => c.entropy.a = parse(key, value)?,
            "seed" => c.seed = parse(key, value)?,
            _ => {
                let Some((phase, field)) = key.split_once('.') else {
                    bail!("unknown setting '{key}'");
                };
                let cfg = match phase {
                    "init" => &mut c.init,
                    "fine_tune" => &mut c.fine_tune,
                    "autoencoder" => &mut c.autoencoder,
                    "forecaster" => &mut c.forecaster_training,
                    _ => bail!("unknown setting '{key}'"),
                };
                set_train(cfg, key, field, value)?;
            }
        }
        Ok(())
    }

    /// Overlay a config file: one `key = value` per line, `#` comments.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        self.apply_text(&text)
            .with_context(|| format!("in config {}", path.display()))
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("line {}: expected key = value", n + 1);
            };
            self.set(k.trim(), v.trim())
                .with_context(|| format!("line {}", n + 1))?;
        }
        Ok(())
    }

    /// Every setting in the file format accepted by [`Settings::apply_text`].
    pub fn render(&self) -> String {
        let c = &self.lifecycle;
        let dims: Vec<String> = self
            .spec
            .layer_dims()
            .iter()
            .map(usize::to_string)
            .collect();
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("layer_dims", dims.join(","));
        kv("warmup_m", c.warmup_m.to_string());
        kv("window_w", c.window_w.to_string());
        kv("holdout", c.holdout_tail.to_string());
        kv("burn_in", c.burn_in.to_string());
        kv("forecaster", c.forecaster.to_string());
        kv("ae_mode", c.ae_mode.to_string());
        kv("compression_width", c.compression_width.to_string());
        kv("scaling", c.scaling.to_string());
        kv("warm_start", c.warm_start.to_string());
        kv("latent_scaling", c.latent_scaling.to_string());
        kv("beta", c.entropy.beta.to_string());
        kv("a", c.entropy.a.to_string());
        kv("seed", c.seed.to_string());
        for (phase, t) in [
            ("init", &c.init),
            ("fine_tune", &c.fine_tune),
            ("autoencoder", &c.autoencoder),
            ("forecaster", &c.forecaster_training),
        ] {
            kv(&format!("{phase}.epochs"), t.epochs.to_string());
            kv(&format!("{phase}.lr"), t.learning_rate.to_string());
            kv(&format!("{phase}.alpha"), t.alpha.to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.lifecycle.validate()?;
        Ok(())
    }
}

fn set_train(cfg: &mut TrainConfig, key: &str, field: &str, value: &str) -> Result<()> {
    match field {
        "epochs" => cfg.epochs = parse(key, value)?,
        "lr" => cfg.learning_rate = parse(key, value)?,
        "alpha" => cfg.alpha = parse(key, value)?,
        _ => bail!("unknown setting '{key}'"),
    }
    Ok(())
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| anyhow::anyhow!("invalid value '{value}' for {key}: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_round_trips() {
        let mut s = Settings::preset("engine").unwrap();
        s.set("forecaster", "transformer").unwrap();
        s.set("autoencoder.lr", "0.00025").unwrap();
        let mut back = Settings::preset("battery").unwrap();
        back.apply_text(&s.render()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn file_overrides_preset() {
        let mut s = Settings::preset("battery").unwrap();
        s.apply_text("# comment\nwarmup_m = 12\n\nfine_tune.epochs=3 # inline\n")
            .unwrap();
        assert_eq!(s.lifecycle.warmup_m, 12);
        assert_eq!(s.lifecycle.fine_tune.epochs, 3);
    }

    #[test]
    fn bad_input_is_reported() {
        let mut s = Settings::preset("battery").unwrap();
        assert!(s.apply_text("warmup_m 12").is_err());
        assert!(s.apply_text("nonsense = 1").is_err());
        assert!(s.apply_text("window_w = five").is_err());
        assert!(s.apply_text("init.momentum = 1").is_err());
        assert!(Settings::preset("no-such-preset").is_err());
    }
}
