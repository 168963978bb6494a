//! `dtlife`: generate data, run lifelong DT updating, and score the results.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use lifelong_dt::lifecycle::AeMode;
use lifelong_dt::networks::ForecasterKind;

use settings::Settings;

const EXIT_VALIDATION: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "dtlife", version, about = "Lifelong digital-twin updating")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic run (manifest plus per-stage CSVs).
    Synth {
        /// battery or engine
        #[arg(long, default_value = "battery")]
        family: String,
        #[arg(long, default_value_t = 40)]
        stages: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Measurement noise standard deviation (family default if omitted).
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train DT_0, warm up, run every update step, and write reports.
    Run {
        /// Run manifest written by `synth` or by hand.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "battery")]
        preset: String,
        /// Flat `key = value` overrides applied on top of the preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        forecaster: Option<ForecasterKind>,
        #[arg(long)]
        ae_mode: Option<AeMode>,
        #[arg(long)]
        warmup_m: Option<usize>,
        #[arg(long)]
        window_w: Option<usize>,
        #[arg(long)]
        holdout: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-score a finished run from its stored database.
    Evaluate {
        /// Output directory of `run`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        burn_in: Option<usize>,
    },
    /// Summarize the MSE curves of a finished run.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        burn_in: Option<usize>,
    },
}

struct Overrides {
    seed: Option<u64>,
    forecaster: Option<ForecasterKind>,
    ae_mode: Option<AeMode>,
    warmup_m: Option<usize>,
    window_w: Option<usize>,
    holdout: Option<usize>,
}

fn resolve(preset: &str, config: Option<&PathBuf>, o: Overrides) -> Result<Settings> {
    let mut s = Settings::preset(preset)?;
    if let Some(path) = config {
        s.apply_file(path)?;
    }
    let c = &mut s.lifecycle;
    if let Some(v) = o.seed {
        c.seed = v;
    }
    if let Some(v) = o.forecaster {
        c.forecaster = v;
    }
    if let Some(v) = o.ae_mode {
        c.ae_mode = v;
    }
    if let Some(v) = o.warmup_m {
        c.warmup_m = v;
    }
    if let Some(v) = o.window_w {
        c.window_w = v;
    }
    if let Some(v) = o.holdout {
        c.holdout_tail = v;
    }
    Ok(s)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            family,
            stages,
            seed,
            noise,
            out,
        } => commands::synth(&family, stages, seed, noise, &out),
        Command::Run {
            data,
            preset,
            config,
            seed,
            forecaster,
            ae_mode,
            warmup_m,
            window_w,
            holdout,
            out,
        } => {
            let settings = resolve(
                &preset,
                config.as_ref(),
                Overrides {
                    seed,
                    forecaster,
                    ae_mode,
                    warmup_m,
                    window_w,
                    holdout,
                },
            )?;
            commands::run(&settings, &data, &out)
        }
        Command::Evaluate { run, data, burn_in } => commands::evaluate(&run, &data, burn_in),
        Command::Report { run, burn_in } => {
            print!("{}", commands::report(&run, burn_in)?);
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<lifelong_dt::Error>() {
            if e.is_divergence() {
                return EXIT_DIVERGENCE;
            }
            if e.is_io() {
                return EXIT_IO;
            }
            return EXIT_VALIDATION;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_VALIDATION
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
