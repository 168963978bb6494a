//! Phase ordering, state handling and the fine-tune-only baseline on a short
//! synthetic battery run.

use lifelong_dt::data::{synth_battery, BatterySynthParams, StageDataset};
use lifelong_dt::lifecycle::{
    baseline_fine_tune_run, fine_tune_step, init_phase, lifelong_update_step,
    predict_future_configs, run_lifecycle, warmup_phase, LifecycleConfig,
};
use lifelong_dt::networks::FnnSpec;
use lifelong_dt::Error;

const STAGES: usize = 10;

fn quick_config() -> LifecycleConfig {
    let mut cfg = LifecycleConfig::battery();
    cfg.warmup_m = 4;
    cfg.window_w = 2;
    cfg.holdout_tail = 2;
    cfg.burn_in = 1;
    cfg.init.epochs = 100;
    cfg.autoencoder.epochs = 10;
    cfg.forecaster_training.epochs = 10;
    cfg
}

fn stages() -> Vec<StageDataset> {
    synth_battery(&BatterySynthParams {
        stages: STAGES,
        seed: 3,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn baseline_matches_the_lifecycle_fine_tune_chain() {
    let (spec, cfg, data) = (FnnSpec::battery(), quick_config(), stages());
    let run = run_lifecycle(&spec, &cfg, &data).unwrap();
    let last_train = cfg.last_training_stage(STAGES).unwrap();
    let db = &run.state.database;
    assert_eq!(db.len(), last_train + 1);
    assert_eq!(
        db.training_stages().iter().copied().collect::<Vec<_>>(),
        (0..=last_train).collect::<Vec<_>>()
    );

    let baseline = baseline_fine_tune_run(&spec, &cfg, &data[..=last_train]).unwrap();
    assert_eq!(baseline.snapshots(), db.snapshots());

    // One rollout per update step, covering every later stage.
    let steps: Vec<usize> = db.rollouts().keys().copied().collect();
    assert_eq!(steps, (cfg.warmup_m..=last_train).collect::<Vec<_>>());
    for (&i, generated) in db.rollouts() {
        let stages: Vec<usize> = generated.iter().map(|s| s.stage_index).collect();
        assert_eq!(stages, (i + 1..STAGES).collect::<Vec<_>>());
    }
    assert_eq!(run.updates.len(), steps.len());
}

#[test]
fn prediction_leaves_the_state_untouched() {
    let (spec, cfg, data) = (FnnSpec::battery(), quick_config(), stages());
    let (mut state, _) = init_phase(&spec, &cfg, &data[0]).unwrap();
    warmup_phase(&mut state, &data[1..=cfg.warmup_m]).unwrap();
    let before = state.database.clone();
    let a = predict_future_configs(&state, 3).unwrap();
    let b = predict_future_configs(&state, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(state.database, before);
    assert_eq!(
        a.iter().map(|s| s.stage_index).collect::<Vec<_>>(),
        vec![5, 6, 7]
    );
}

#[test]
fn phases_reject_missing_history_and_out_of_order_stages() {
    let (spec, cfg, data) = (FnnSpec::battery(), quick_config(), stages());
    let (mut state, _) = init_phase(&spec, &cfg, &data[0]).unwrap();

    assert!(matches!(
        predict_future_configs(&state, 2),
        Err(Error::InsufficientHistory { .. })
    ));
    assert!(matches!(
        lifelong_update_step(&mut state, &data[1]),
        Err(Error::InsufficientHistory { .. })
    ));
    assert!(matches!(
        warmup_phase(&mut state.clone(), &data[1..cfg.warmup_m]),
        Err(Error::InsufficientHistory { needed: 4, have: 3 })
    ));
    assert!(matches!(
        fine_tune_step(&mut state, &data[2]),
        Err(Error::StageOrder {
            expected: 1,
            got: 2
        })
    ));
    assert!(matches!(
        init_phase(&spec, &cfg, &data[1]),
        Err(Error::StageOrder { .. })
    ));
    // Failed calls leave nothing behind.
    assert_eq!(state.database.len(), 1);
}
