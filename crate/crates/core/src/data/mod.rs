//! Stage datasets: loading, preprocessing, and synthetic generation.

mod dataset;
mod preprocess;
mod synth;

pub use dataset::{load_run, write_run, Column, Run, RunManifest, StageDataset, StageEntry};
pub use preprocess::{
    even_indices, sample_evenly, smooth_downsample, smooth_downsample_columns, MinMaxScaler,
};
pub use synth::{
    engine_inputs, engine_pressure, synth_battery, synth_engine, BatterySynthParams, Conditions,
    EngineSynthParams,
};
