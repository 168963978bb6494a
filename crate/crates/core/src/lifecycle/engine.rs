//! Lifecycle phases: DT_0 training, warm-up fine-tuning, and lifelong
//! update steps that retrain the dynamic model and forecast future
//! configurations.

use std::time::Instant;

use super::config::{AeMode, LifecycleConfig};
use super::database::ConfigDatabase;
use super::dynamic::DynamicModel;
use crate::autodiff::derive_seed;
use crate::data::StageDataset;
use crate::entropy::{entropy_report, EntropyReport};
use crate::error::{Error, Result};
use crate::networks::{fnn_train, ConfigSnapshot, FnnSpec};
use crate::train::TrainLog;

const INIT_SEED_TAG: u64 = 0x1417;

#[derive(Clone, Debug)]
pub struct LifecycleState {
    pub config: LifecycleConfig,
    pub database: ConfigDatabase,
    /// Entropy of DT_0 over all parameters.
    pub entropy: EntropyReport,
    /// Latent width of every dynamic-model channel.
    pub latent_dims: Vec<usize>,
    pub dynamic: Option<DynamicModel>,
}

impl LifecycleState {
    pub fn spec(&self) -> &FnnSpec {
        self.database.spec()
    }

    /// Newest stored configuration.
    pub fn current(&self) -> &ConfigSnapshot {
        self.database.latest().expect("state always holds DT_0")
    }

    fn expect_next(&self, data: &StageDataset) -> Result<()> {
        let expected = self.database.len();
        if data.stage_index != expected {
            return Err(Error::StageOrder {
                expected,
                got: data.stage_index,
            });
        }
        Ok(())
    }
}

/// Latent widths per channel: one from the entropy of the whole
/// configuration in joint mode, one per parameter group otherwise.
pub fn channel_latent_dims(
    spec: &FnnSpec,
    theta0: &ConfigSnapshot,
    cfg: &LifecycleConfig,
) -> Result<(EntropyReport, Vec<usize>)> {
    let full = entropy_report(&theta0.flat(), &cfg.entropy)?;
    let dims = match cfg.ae_mode {
        AeMode::Joint => vec![full.latent_dim],
        AeMode::PerLayer => theta0
            .branch_vectors(spec)
            .iter()
            .map(|b| entropy_report(b, &cfg.entropy).map(|r| r.latent_dim))
            .collect::<Result<_>>()?,
    };
    Ok((full, dims))
}

/// Train DT_0 from a seeded initialization on stage 0 and size the latent
/// space from its entropy.
pub fn init_phase(
    spec: &FnnSpec,
    cfg: &LifecycleConfig,
    d0: &StageDataset,
) -> Result<(LifecycleState, TrainLog)> {
    cfg.validate()?;
    if d0.stage_index != 0 {
        return Err(Error::StageOrder {
            expected: 0,
            got: d0.stage_index,
        });
    }
    let start = Instant::now();
    let init = ConfigSnapshot::seeded(spec, derive_seed(cfg.seed, INIT_SEED_TAG));
    let (theta0, log) = fnn_train(spec, d0, &cfg.init, &init)?;
    let (entropy, latent_dims) = channel_latent_dims(spec, &theta0, cfg)?;
    log::info!(
        "DT_0 trained: mse {:.3e}, H = {:.3} bits, L = {:?} ({:.1?})",
        log.last.mse,
        entropy.entropy,
        latent_dims,
        start.elapsed()
    );
    let mut database = ConfigDatabase::new(spec.clone(), cfg.seed);
    database.set_latent_dims(latent_dims.clone());
    database.push(theta0)?;
    database.record_training_stage(0);
    let state = LifecycleState {
        config: cfg.clone(),
        database,
        entropy,
        latent_dims,
        dynamic: None,
    };
    Ok((state, log))
}

/// Fine-tune the newest configuration on the next stage and store it.
pub fn fine_tune_step(state: &mut LifecycleState, data: &StageDataset) -> Result<TrainLog> {
    state.expect_next(data)?;
    let (theta, log) = fnn_train(state.spec(), data, &state.config.fine_tune, state.current())?;
    state.database.push(theta)?;
    state.database.record_training_stage(data.stage_index);
    Ok(log)
}

/// Retrain the dynamic model from scratch on every stored configuration.
pub fn retrain_dynamic(state: &mut LifecycleState) -> Result<()> {
    let start = Instant::now();
    let model = DynamicModel::train(
        state.database.spec(),
        state.database.snapshots(),
        &state.latent_dims,
        &state.config,
        if state.config.warm_start {
            state.dynamic.as_ref()
        } else {
            None
        },
    )?;
    for (c, ch) in model.channels.iter().enumerate() {
        log::debug!(
            "stage {} channel {c}: autoencoder {:.3e}, forecaster {:.3e}",
            model.trained_through,
            ch.autoencoder_log.last.total,
            ch.forecaster_log.last.total
        );
    }
    log::info!(
        "dynamic model retrained through stage {} ({:.1?})",
        model.trained_through,
        start.elapsed()
    );
    state.dynamic = Some(model);
    Ok(())
}

/// Fine-tune on stages `1..=m` and train the first dynamic model.
pub fn warmup_phase(state: &mut LifecycleState, stages: &[StageDataset]) -> Result<Vec<TrainLog>> {
    let m = state.config.warmup_m;
    if stages.len() != m {
        return Err(Error::InsufficientHistory {
            needed: m,
            have: stages.len(),
        });
    }
    let logs = stages
        .iter()
        .map(|d| fine_tune_step(state, d))
        .collect::<Result<Vec<_>>>()?;
    retrain_dynamic(state)?;
    Ok(logs)
}

/// Generate configurations for the `horizon` stages after the newest one.
/// Does not modify the state.
pub fn predict_future_configs(
    state: &LifecycleState,
    horizon: usize,
) -> Result<Vec<ConfigSnapshot>> {
    let model = state.dynamic.as_ref().ok_or(Error::InsufficientHistory {
        needed: state.config.warmup_m + 1,
        have: state.database.len(),
    })?;
    model.rollout(state.spec(), state.database.snapshots(), horizon)
}

/// One lifelong update: fine-tune on the new stage, then retrain the
/// dynamic model on the grown database.
pub fn lifelong_update_step(state: &mut LifecycleState, data: &StageDataset) -> Result<TrainLog> {
    if state.dynamic.is_none() {
        return Err(Error::InsufficientHistory {
            needed: state.config.warmup_m + 1,
            have: state.database.len(),
        });
    }
    let log = fine_tune_step(state, data)?;
    retrain_dynamic(state)?;
    Ok(log)
}

/// Baseline: DT_0 followed by plain fine-tuning on every given stage.
pub fn baseline_fine_tune_run(
    spec: &FnnSpec,
    cfg: &LifecycleConfig,
    stages: &[StageDataset],
) -> Result<ConfigDatabase> {
    let (d0, rest) = stages.split_first().ok_or(Error::Empty("stage list"))?;
    let (mut state, _) = init_phase(spec, cfg, d0)?;
    for d in rest {
        fine_tune_step(&mut state, d)?;
    }
    Ok(state.database)
}

/// Per-step training summary of a full run.
#[derive(Clone, Debug)]
pub struct UpdateRecord {
    pub stage: usize,
    pub fine_tune: TrainLog,
    pub autoencoder_loss: Vec<f64>,
    pub forecaster_loss: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LifecycleRun {
    pub state: LifecycleState,
    pub init_log: TrainLog,
    pub updates: Vec<UpdateRecord>,
}

/// Store generated configurations for every stage after the newest one.
/// The final stage has no future, so nothing is stored for it.
fn record_rollout(state: &mut LifecycleState, total_stages: usize) -> Result<()> {
    let stage = state.current().stage_index;
    let horizon = total_stages - 1 - stage;
    if horizon == 0 {
        return Ok(());
    }
    let generated = predict_future_configs(state, horizon)?;
    state.database.set_rollout(stage, generated)
}

fn update_record(state: &LifecycleState, fine_tune: TrainLog) -> UpdateRecord {
    let model = state.dynamic.as_ref().expect("dynamic model trained");
    UpdateRecord {
        stage: state.current().stage_index,
        fine_tune,
        autoencoder_loss: model
            .channels
            .iter()
            .map(|c| c.autoencoder_log.last.total)
            .collect(),
        forecaster_loss: model
            .channels
            .iter()
            .map(|c| c.forecaster_log.last.total)
            .collect(),
    }
}

/// Full lifelong run over `stages` (indices `0..K`).
///
/// Stages after `K - 1 - holdout_tail` are never trained on. At every
/// update step from `m` on, configurations for all remaining stages are
/// generated and stored in the database (none after the final stage).
pub fn run_lifecycle(
    spec: &FnnSpec,
    cfg: &LifecycleConfig,
    stages: &[StageDataset],
) -> Result<LifecycleRun> {
    cfg.validate()?;
    let k = stages.len();
    let last_train = cfg.last_training_stage(k)?;
    for (i, d) in stages.iter().enumerate() {
        if d.stage_index != i {
            return Err(Error::StageOrder {
                expected: i,
                got: d.stage_index,
            });
        }
    }
    let m = cfg.warmup_m;
    let (mut state, init_log) = init_phase(spec, cfg, &stages[0])?;
    let warm = warmup_phase(&mut state, &stages[1..=m])?;
    record_rollout(&mut state, k)?;
    let mut updates = vec![update_record(&state, warm.last().cloned().expect("m >= 1"))];
    for d in &stages[m + 1..=last_train] {
        log::info!("update step at stage {} of {}", d.stage_index, last_train);
        let ft = lifelong_update_step(&mut state, d)?;
        record_rollout(&mut state, k)?;
        updates.push(update_record(&state, ft));
    }
    Ok(LifecycleRun {
        state,
        init_log,
        updates,
    })
}
