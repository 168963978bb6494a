//! Lifelong DT updating: configuration database, dynamic model, phases.

mod config;
mod database;
mod dynamic;
mod engine;

pub use config::{AeMode, AeScaling, LifecycleConfig};
pub use database::ConfigDatabase;
pub use dynamic::{channel_groups, progressive_rollout, Channel, DynamicModel, Standardizer};
pub use engine::{
    baseline_fine_tune_run, channel_latent_dims, fine_tune_step, init_phase, lifelong_update_step,
    predict_future_configs, retrain_dynamic, run_lifecycle, warmup_phase, LifecycleRun,
    LifecycleState, UpdateRecord,
};
