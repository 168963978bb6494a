use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lifelong_dt::data::{
    load_run, synth_battery, synth_engine, write_run, BatterySynthParams, EngineSynthParams,
    StageDataset,
};
use lifelong_dt::evaluation::{
    build_report, evaluate_database, read_mse_curves, summarize, write_boxplot, write_mse_curves,
    write_success_ratio, LifecycleReport, MseCurve, Source,
};
use lifelong_dt::lifecycle::{run_lifecycle, ConfigDatabase};
use lifelong_dt::networks::FnnSpec;
use lifelong_dt::Error;
use serde_json::json;

use crate::settings::Settings;

pub const CONFIG_FILE: &str = "config.resolved";

pub fn synth(family: &str, stages: usize, seed: u64, noise: Option<f64>, out: &Path) -> Result<()> {
    let (data, name, preprocessing) = match family {
        "battery" => {
            let mut p = BatterySynthParams {
                stages,
                seed,
                ..Default::default()
            };
            if let Some(n) = noise {
                p.noise_std = n;
            }
            (synth_battery(&p)?, "synthetic-battery", vec![])
        }
        "engine" => {
            let mut p = EngineSynthParams {
                stages,
                seed,
                ..Default::default()
            };
            if let Some(n) = noise {
                p.noise_std = n;
            }
            let pre = vec![
                format!("smooth_downsample(window={})", p.window),
                "minmax(joint over stages)".to_string(),
            ];
            (synth_engine(&p)?, "synthetic-engine", pre)
        }
        other => bail!(Error::InvalidConfig(format!(
            "unknown family '{other}' (expected battery or engine)"
        ))),
    };
    let path = write_run(out, name, &data, &preprocessing, Some(seed))?;
    log::info!("wrote {} stages to {}", data.len(), path.display());
    Ok(())
}

fn load_stages(manifest: &Path, spec: &FnnSpec) -> Result<Vec<StageDataset>> {
    let run = load_run(manifest)?;
    let m = &run.manifest;
    if m.d_in != spec.input_dim() || m.d_out != spec.output_dim() {
        bail!(Error::SpecMismatch {
            expected: format!("{} inputs, {} outputs", spec.input_dim(), spec.output_dim()),
            found: format!(
                "{} inputs, {} outputs in {}",
                m.d_in,
                m.d_out,
                manifest.display()
            ),
        });
    }
    log::info!("loaded {} stages of '{}'", run.stages.len(), m.run_name);
    Ok(run.stages)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn run(settings: &Settings, data: &Path, out: &Path) -> Result<()> {
    settings.validate()?;
    let stages = load_stages(data, &settings.spec)?;
    settings.lifecycle.last_training_stage(stages.len())?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join(CONFIG_FILE), &settings.render())?;

    let result = run_lifecycle(&settings.spec, &settings.lifecycle, &stages)?;
    let state = &result.state;
    state.database.save(&out.join("db"))?;

    let e = &state.entropy;
    let entropy = json!({
        "entropy_bits": e.entropy,
        "latent_dim": e.latent_dim,
        "channel_latent_dims": state.latent_dims,
        "parameter_count": e.parameter_count,
        "beta": e.config.beta,
        "a": e.config.a,
        "probabilities": e.probabilities,
    });
    let text = serde_json::to_string_pretty(&entropy).expect("json value serializes");
    write_file(&out.join("entropy.json"), &(text + "\n"))?;

    score(settings, &state.database, &stages, out)
}

/// Score every stored rollout and write the CSV reports and summary.
fn score(
    settings: &Settings,
    db: &ConfigDatabase,
    stages: &[StageDataset],
    out: &Path,
) -> Result<()> {
    let curves = evaluate_database(db, stages)?;
    let report = build_report(
        curves,
        settings.lifecycle.warmup_m,
        settings.lifecycle.burn_in,
    )?;
    write_reports(&report, out)
}

fn write_reports(report: &LifecycleReport, out: &Path) -> Result<()> {
    let all: Vec<&MseCurve> = report
        .fine_tuned
        .iter()
        .zip(&report.generated)
        .flat_map(|(a, b)| [a, b])
        .collect();
    write_mse_curves(&out.join("mse_curves.csv"), &all)?;
    write_success_ratio(&out.join("success_ratio.csv"), &report.success)?;
    write_boxplot(
        &out.join("boxplot.csv"),
        &report.boxplot_fine_tuned,
        &report.boxplot_generated,
    )?;
    let summary = summarize(report);
    write_file(&out.join("summary.txt"), &summary.to_string())?;
    log::info!(
        "mean success ratio after burn-in: {}",
        summary
            .mean_success_ratio
            .map_or_else(|| "n/a".to_string(), |r| format!("{r:.4}"))
    );
    Ok(())
}

fn settings_of_run(run_dir: &Path) -> Result<Settings> {
    let mut settings = Settings::preset("battery")?;
    settings.apply_file(&run_dir.join(CONFIG_FILE))?;
    Ok(settings)
}

pub fn evaluate(run_dir: &Path, data: &Path, burn_in: Option<usize>) -> Result<()> {
    let mut settings = settings_of_run(run_dir)?;
    if let Some(b) = burn_in {
        settings.lifecycle.burn_in = b;
    }
    let db = ConfigDatabase::load(&run_dir.join("db"), Some(&settings.spec))?;
    let stages = load_stages(data, &settings.spec)?;
    score(&settings, &db, &stages, run_dir)
}

pub fn report(run_dir: &Path, burn_in: Option<usize>) -> Result<String> {
    let settings = settings_of_run(run_dir)?;
    let path: PathBuf = run_dir.join("mse_curves.csv");
    let curves = read_mse_curves(&path)?;
    let (ft, gen): (Vec<MseCurve>, Vec<MseCurve>) = curves
        .into_iter()
        .partition(|c| c.source == Source::FineTuned);
    if ft.len() != gen.len() {
        bail!(Error::format(&path, "unpaired fine-tuned/generated curves"));
    }
    let report = build_report(
        ft.into_iter().zip(gen).collect(),
        settings.lifecycle.warmup_m,
        burn_in.unwrap_or(settings.lifecycle.burn_in),
    )?;
    let summary = summarize(&report).to_string();
    write_file(&run_dir.join("summary.txt"), &summary).context("writing summary")?;
    Ok(summary)
}
