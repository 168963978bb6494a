//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use lifelong_dt::autodiff::{Rng, Tensor};
use lifelong_dt::data::{synth_battery, synth_engine, BatterySynthParams, EngineSynthParams};
use lifelong_dt::evaluation::{
    boxplot_matrix, build_report, evaluate_database, summarize, write_boxplot, write_mse_curves,
    write_success_ratio, LifecycleReport, MseCurve, Summary,
};
use lifelong_dt::lifecycle::{
    fine_tune_step, init_phase, run_lifecycle, AeMode, ConfigDatabase, LifecycleConfig,
};
use lifelong_dt::networks::{
    flatten_layer, fnn_forward, fnn_train, unflatten_layer, ConfigSnapshot, FnnSpec, ForecasterKind,
};
use lifelong_dt::TrainConfig;

use common::{gradient_families, FD_REL_TOL};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// 1. Reverse-mode gradients agree with central differences.
fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, f) in gradient_families() {
        let errs: Vec<f64> = (0..20).map(|s| f(2000 + s)).collect();
        let fails = errs.iter().filter(|&&e| e > FD_REL_TOL).count();
        let worst = errs.iter().cloned().fold(0.0, f64::max);
        ok &= fails == 0;
        parts.push(format!("{name} 20 seeds max {worst:.1e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 60.0;
    ensure(ok, format!("{}; {secs:.1}s", parts.join(", ")))
}

/// 2. Entropy: exact trivial cases, shift invariance, latent widths.
fn entropy_checks() -> Outcome {
    use lifelong_dt::entropy::{config_entropy, gibbs_probabilities};
    let mut ok = true;
    for n in [1usize, 4, 151, 6561] {
        let h = config_entropy(&gibbs_probabilities(&vec![0.7; n], 1.0).unwrap()).unwrap();
        ok &= (h - (n as f64).log2()).abs() <= 1e-12;
    }
    let mut one_hot = vec![0.0; 5];
    one_hot[2] = 1.0;
    ok &= config_entropy(&one_hot).unwrap() == 0.0;
    let trivial_ok = ok;

    let spec = FnnSpec::battery();
    let mut rng = Rng::new(42);
    let mut shift_ok = true;
    for _ in 0..100 {
        let theta: Vec<f64> = (0..spec.param_count())
            .map(|_| rng.normal(0.0, 1.0))
            .collect();
        let c = rng.uniform(-20.0, 20.0);
        let shifted: Vec<f64> = theta.iter().map(|v| v + c).collect();
        let p = gibbs_probabilities(&theta, 1.0).unwrap();
        let q = gibbs_probabilities(&shifted, 1.0).unwrap();
        shift_ok &= p.iter().zip(&q).all(|(a, b)| (a - b).abs() <= 1e-12);
    }

    let battery: Vec<usize> = (0..10)
        .map(|seed| {
            let d0 = synth_battery(&BatterySynthParams {
                stages: 1,
                seed,
                ..Default::default()
            })
            .unwrap()
            .remove(0);
            let cfg = LifecycleConfig {
                seed,
                ..LifecycleConfig::battery()
            };
            init_phase(&spec, &cfg, &d0).unwrap().0.entropy.latent_dim
        })
        .collect();
    let engine_spec = FnnSpec::engine();
    let engine: Vec<usize> = (0..10)
        .map(|seed| {
            let d0 = synth_engine(&EngineSynthParams {
                seed,
                ..Default::default()
            })
            .unwrap()
            .remove(0);
            let cfg = LifecycleConfig {
                seed,
                ..LifecycleConfig::engine()
            };
            init_phase(&engine_spec, &cfg, &d0)
                .unwrap()
                .0
                .entropy
                .latent_dim
        })
        .collect();
    let b14 = battery.iter().filter(|&&l| l == 14).count();
    let e26 = engine.iter().filter(|&&l| l == 26).count();
    ensure(
        trivial_ok && shift_ok && b14 >= 8 && e26 >= 8,
        format!(
            "trivial {trivial_ok}, shift invariance {shift_ok}, battery L=14 in {b14}/10 \
             {battery:?}, engine L=26 in {e26}/10 {engine:?}"
        ),
    )
}

/// 3. Shapes, flatten round trip, database round trip, concat/split.
fn structural_invariants() -> Outcome {
    let mut rng = Rng::new(7);
    let mut checked = 0;
    for spec in [
        FnnSpec::battery(),
        FnnSpec::engine(),
        FnnSpec::new(vec![3, 5, 2]).unwrap(),
    ] {
        let flat: Vec<f64> = (0..spec.param_count())
            .map(|_| rng.normal(0.0, 1.0))
            .collect();
        let snap = ConfigSnapshot::from_flat(&spec, 0, &flat).unwrap();
        if snap.flat() != flat {
            return Err("flat view differs".into());
        }
        let dims = spec.layer_dims();
        for (l, wb) in snap.to_params(&spec).unwrap().chunks(2).enumerate() {
            if wb[0].shape() != [dims[l + 1], dims[l]] || wb[1].shape() != [dims[l + 1]] {
                return Err(format!("layer {l} has shapes {:?}", wb[0].shape()));
            }
            let f = flatten_layer(&wb[0], &wb[1]).unwrap();
            let (w, b) = unflatten_layer(&f, dims[l], dims[l + 1]).unwrap();
            if w != wb[0] || b != wb[1] {
                return Err(format!("layer {l} flatten round trip"));
            }
        }
        let branches = snap.branch_vectors(&spec);
        let rows: Vec<Tensor> = branches.iter().map(|b| Tensor::row(b.clone())).collect();
        let joined = Tensor::concat_rows(&rows).unwrap();
        if joined.data() != flat.as_slice()
            || joined.split_row(&spec.branch_sizes()).unwrap() != rows
            || ConfigSnapshot::from_branches(&spec, 0, &branches).unwrap() != snap
        {
            return Err("concat/split round trip".into());
        }
        let x = Tensor::matrix(4, spec.input_dim(), vec![0.1; 4 * spec.input_dim()]).unwrap();
        if fnn_forward(&spec, &snap, &x).unwrap().shape() != [4, spec.output_dim()] {
            return Err("forward shape".into());
        }

        let mut db = ConfigDatabase::new(spec.clone(), 5);
        db.set_latent_dims(vec![3]);
        for i in 0..4 {
            let v: Vec<f64> = (0..spec.param_count())
                .map(|_| rng.normal(0.0, 1.0))
                .collect();
            db.push(ConfigSnapshot::from_flat(&spec, i, &v).unwrap())
                .unwrap();
            db.record_training_stage(i);
        }
        db.set_rollout(3, vec![ConfigSnapshot::from_flat(&spec, 4, &flat).unwrap()])
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        db.save(dir.path()).unwrap();
        let back = ConfigDatabase::load(dir.path(), Some(&spec)).unwrap();
        if back != db {
            return Err("database round trip".into());
        }
        checked += 1;
    }
    Ok(format!("{checked} architectures"))
}

/// 4. DT_0 fits a noiseless battery stage.
fn dt0_fit() -> Outcome {
    let spec = FnnSpec::battery();
    let cfg = TrainConfig::new(1000, 5e-3, 0.0, 0);
    let mut mses = Vec::new();
    for seed in 0..5 {
        let d0 = synth_battery(&BatterySynthParams {
            stages: 1,
            seed,
            noise_std: 0.0,
            ..Default::default()
        })
        .unwrap()
        .remove(0);
        assert_eq!(d0.len(), 200);
        let init = ConfigSnapshot::seeded(&spec, 100 + seed);
        let (_, log) = fnn_train(&spec, &d0, &cfg, &init).unwrap();
        mses.push(log.last.mse);
    }
    let worst = mses.iter().cloned().fold(0.0, f64::max);
    ensure(
        worst <= 1e-3,
        format!("worst MSE over 5 seeds {worst:.2e} (1000 epochs, lr 5e-3)"),
    )
}

fn scaled_config() -> LifecycleConfig {
    let mut cfg = LifecycleConfig::battery();
    cfg.warmup_m = 10;
    cfg.window_w = 5;
    cfg.holdout_tail = 5;
    cfg.autoencoder.epochs = 300;
    cfg.forecaster_training.epochs = 300;
    cfg
}

struct RunOutput {
    report: LifecycleReport,
    summary: Summary,
    seconds: f64,
}

fn scaled_run(cfg: &LifecycleConfig, out: &Path) -> RunOutput {
    let stages = synth_battery(&BatterySynthParams {
        stages: 40,
        seed: cfg.seed,
        ..Default::default()
    })
    .unwrap();
    let start = Instant::now();
    let run = run_lifecycle(&FnnSpec::battery(), cfg, &stages).unwrap();
    let seconds = start.elapsed().as_secs_f64();
    run.state.database.save(&out.join("db")).unwrap();
    let curves = evaluate_database(&run.state.database, &stages).unwrap();
    let report = build_report(curves, cfg.warmup_m, cfg.burn_in).unwrap();
    let all: Vec<&MseCurve> = report.fine_tuned.iter().chain(&report.generated).collect();
    write_mse_curves(&out.join("mse_curves.csv"), &all).unwrap();
    write_success_ratio(&out.join("success_ratio.csv"), &report.success).unwrap();
    write_boxplot(
        &out.join("boxplot.csv"),
        &report.boxplot_fine_tuned,
        &report.boxplot_generated,
    )
    .unwrap();
    let summary = summarize(&report);
    fs::write(out.join("summary.txt"), summary.to_string()).unwrap();
    RunOutput {
        report,
        summary,
        seconds,
    }
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

/// 5. Scaled end-to-end battery run.
fn scaled_end_to_end(joint_generated_mse: &mut Option<f64>) -> Outcome {
    let cfg = scaled_config();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = scaled_run(&cfg, a.path());
    let second = scaled_run(&cfg, b.path());
    let fa = files_under(a.path());
    let identical = !fa.is_empty() && fa == files_under(b.path());
    let s = &first.summary;
    *joint_generated_mse = s.mean_generated_mse;
    let ratio = s.mean_success_ratio.unwrap_or(f64::NAN);
    let frac = s.stages_generated_median_le as f64 / s.stages_with_values.max(1) as f64;
    let slowest = first.seconds.max(second.seconds);
    ensure(
        identical && ratio >= 0.5 && frac >= 0.6 && slowest < 600.0,
        format!(
            "(a) byte-identical {identical} ({} files); (b) mean success ratio {ratio:.3}; \
             (c) generated median <= fine-tuned at {}/{} stages ({:.0}%); {slowest:.0}s per run",
            fa.len(),
            s.stages_generated_median_le,
            s.stages_with_values,
            100.0 * frac
        ),
    )
}

/// 6. Boxplot counts with m = 20 and a burn-in of 10.
///
/// Updates run through the final stage (no holdout), so every stage `j`
/// collects one value from each update step `i` with `m + 10 <= i < j`.
fn boxplot_counts() -> Outcome {
    let mut cfg = LifecycleConfig::battery();
    cfg.warmup_m = 20;
    cfg.burn_in = 10;
    cfg.holdout_tail = 0;
    cfg.autoencoder.epochs = 20;
    cfg.forecaster_training.epochs = 20;
    let k = 40;
    let stages = synth_battery(&BatterySynthParams {
        stages: k,
        ..Default::default()
    })
    .unwrap();
    let run = run_lifecycle(&FnnSpec::battery(), &cfg, &stages).unwrap();
    let curves = evaluate_database(&run.state.database, &stages).unwrap();
    let report = build_report(curves, cfg.warmup_m, cfg.burn_in).unwrap();
    let cutoff = cfg.warmup_m + cfg.burn_in;
    let count = |m: &BTreeMap<usize, Vec<f64>>, j: usize| m.get(&j).map_or(0, Vec::len);
    let formula_ok = (0..k).all(|j| {
        let expected = j.saturating_sub(cutoff);
        count(&report.boxplot_generated, j) == expected
            && count(&report.boxplot_fine_tuned, j) == expected
    });
    let generated: Vec<MseCurve> = report.generated.clone();
    let direct = boxplot_matrix(&generated, cfg.warmup_m, cfg.burn_in);
    let ratios_ok = report.success.len() == k - 1 - cfg.warmup_m
        && report
            .success
            .iter()
            .all(|e| e.n_all == k - 1 - e.update_step && e.n_better <= e.n_all);
    ensure(
        count(&direct, 32) == 2 && formula_ok && ratios_ok,
        format!(
            "stage 32 has {} values; count = max(0, j - 10 - m) at all {k} stages: \
             {formula_ok}; {} success ratios with n_all = K - 1 - i: {ratios_ok}",
            count(&direct, 32),
            report.success.len()
        ),
    )
}

fn report_is_valid(r: &LifecycleReport, s: &Summary, updates: usize) -> Result<(), String> {
    if r.success.len() != updates || s.update_steps != updates {
        return Err(format!(
            "{} success entries for {updates} updates",
            r.success.len()
        ));
    }
    if r.success
        .iter()
        .any(|e| !(0.0..=1.0).contains(&e.ratio) || e.n_all == 0)
    {
        return Err("success ratio out of range".into());
    }
    let finite = |c: &MseCurve| c.values.values().all(|v| v.is_finite() && *v >= 0.0);
    if !r.fine_tuned.iter().chain(&r.generated).all(finite) {
        return Err("non-finite MSE".into());
    }
    if s.mean_success_ratio.is_none() || s.stages_with_values == 0 {
        return Err("empty summary".into());
    }
    Ok(())
}

/// 7. Transformer forecaster and per-layer autoencoders.
fn variants(joint_generated_mse: Option<f64>) -> Outcome {
    let base = scaled_config();
    let updates = 40 - 1 - base.holdout_tail - base.warmup_m + 1;
    let mut parts = Vec::new();
    let mut per_layer_mse = None;
    for (name, cfg) in [
        (
            "transformer",
            LifecycleConfig {
                forecaster: ForecasterKind::Transformer,
                ..base.clone()
            },
        ),
        (
            "per-layer",
            LifecycleConfig {
                ae_mode: AeMode::PerLayer,
                ..base.clone()
            },
        ),
    ] {
        let dir = tempfile::tempdir().unwrap();
        let out = scaled_run(&cfg, dir.path());
        report_is_valid(&out.report, &out.summary, updates).map_err(|e| format!("{name}: {e}"))?;
        if name == "per-layer" {
            per_layer_mse = out.summary.mean_generated_mse;
        }
        parts.push(format!(
            "{name} valid (ratio {:.3}, {}/{} stages, {:.0}s)",
            out.summary.mean_success_ratio.unwrap(),
            out.summary.stages_generated_median_le,
            out.summary.stages_with_values,
            out.seconds
        ));
    }
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3e}"));
    parts.push(format!(
        "mean generated MSE per-layer {} vs joint {}",
        fmt(per_layer_mse),
        fmt(joint_generated_mse)
    ));
    Ok(parts.join("; "))
}

/// 8. The reported fine-tune loss is the objective at the returned weights.
fn fine_tune_loss_identity() -> Outcome {
    let spec = FnnSpec::battery();
    let cfg = LifecycleConfig::battery();
    let stages = synth_battery(&BatterySynthParams {
        stages: 4,
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    let (mut state, _) = init_phase(&spec, &cfg, &stages[0]).unwrap();
    let mut worst = 0.0f64;
    for d in &stages[1..] {
        let log = fine_tune_step(&mut state, d).unwrap();
        let theta = state.current();
        let pred = fnn_forward(&spec, theta, &d.x).unwrap();
        let n = pred.len() as f64;
        let mse: f64 = pred
            .data()
            .iter()
            .zip(d.y.data())
            .map(|(p, y)| (p - y) * (p - y))
            .sum::<f64>()
            / n;
        let l2: f64 = theta.flat().iter().map(|v| v * v).sum();
        let recomputed = mse + cfg.fine_tune.alpha * l2;
        worst = worst.max((log.last.total - recomputed).abs());
    }
    ensure(
        worst <= 1e-10,
        format!("max |reported - recomputed| = {worst:.2e} over 3 fine-tune steps"),
    )
}

fn main() {
    let mut joint_generated_mse = None;
    let mut all_ok = true;
    let mut record = |n: usize, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome =
            catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                all_ok = false;
                ("FAIL", d)
            }
        };
        println!("criterion {n}: {tag} [{secs:.1}s] {detail}");
    };
    record(1, &mut gradient_suite);
    record(2, &mut entropy_checks);
    record(3, &mut structural_invariants);
    record(4, &mut dt0_fit);
    record(5, &mut || scaled_end_to_end(&mut joint_generated_mse));
    record(6, &mut boxplot_counts);
    record(7, &mut || variants(joint_generated_mse));
    record(8, &mut fine_tune_loss_identity);
    if !all_ok {
        std::process::exit(1);
    }
}
