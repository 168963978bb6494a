//! Scoring generated versus fine-tuned configurations on future stages.

mod io;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::StageDataset;
use crate::error::{Error, Result};
use crate::lifecycle::ConfigDatabase;
use crate::networks::{fnn_forward, ConfigSnapshot, FnnSpec};

pub use io::{read_mse_curves, write_boxplot, write_mse_curves, write_success_ratio};

/// Mean squared error of `theta` on a stage, over samples and outputs.
pub fn stage_mse(spec: &FnnSpec, theta: &ConfigSnapshot, data: &StageDataset) -> Result<f64> {
    let pred = fnn_forward(spec, theta, &data.x)?;
    Ok(crate::autodiff::mse_raw(pred.data(), data.y.data()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    FineTuned,
    Generated,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::FineTuned => "fine_tuned",
            Source::Generated => "generated",
        })
    }
}

impl std::str::FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fine_tuned" => Ok(Source::FineTuned),
            "generated" => Ok(Source::Generated),
            other => Err(Error::InvalidConfig(format!("unknown source '{other}'"))),
        }
    }
}

/// MSE on each future stage of the configuration(s) available at one
/// update step.
#[derive(Clone, Debug, PartialEq)]
pub struct MseCurve {
    pub update_step: usize,
    pub source: Source,
    /// Future stage -> MSE.
    pub values: BTreeMap<usize, f64>,
}

/// Score the fine-tuned configuration of update step `i` and the
/// configurations generated at that step on every future stage in `futures`.
///
/// `generated[k]` is for stage `i + 1 + k`; stages beyond the rollout are
/// skipped for both sources.
pub fn evaluate_update_step(
    spec: &FnnSpec,
    fine_tuned: &ConfigSnapshot,
    generated: &[ConfigSnapshot],
    futures: &[StageDataset],
) -> Result<(MseCurve, MseCurve)> {
    let i = fine_tuned.stage_index;
    let mut ft = MseCurve {
        update_step: i,
        source: Source::FineTuned,
        values: BTreeMap::new(),
    };
    let mut gen = MseCurve {
        update_step: i,
        source: Source::Generated,
        values: BTreeMap::new(),
    };
    for d in futures.iter().filter(|d| d.stage_index > i) {
        let j = d.stage_index;
        let Some(g) = generated.get(j - i - 1) else {
            continue;
        };
        if g.stage_index != j {
            return Err(Error::StageOrder {
                expected: j,
                got: g.stage_index,
            });
        }
        ft.values.insert(j, stage_mse(spec, fine_tuned, d)?);
        gen.values.insert(j, stage_mse(spec, g, d)?);
    }
    Ok((ft, gen))
}

/// Curves for every update step stored in `db`, in step order.
pub fn evaluate_database(
    db: &ConfigDatabase,
    stages: &[StageDataset],
) -> Result<Vec<(MseCurve, MseCurve)>> {
    db.rollouts()
        .iter()
        .map(|(&step, generated)| {
            let theta = db.get(step).ok_or(Error::StageOrder {
                expected: step,
                got: db.len(),
            })?;
            evaluate_update_step(db.spec(), theta, generated, stages)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessEntry {
    pub update_step: usize,
    pub n_better: usize,
    pub n_all: usize,
    pub ratio: f64,
}

/// Fraction of future stages where the generated configuration is strictly
/// better than the fine-tuned one.
pub fn success_ratio(fine_tuned: &MseCurve, generated: &MseCurve) -> Result<SuccessEntry> {
    if fine_tuned.update_step != generated.update_step {
        return Err(Error::StageOrder {
            expected: fine_tuned.update_step,
            got: generated.update_step,
        });
    }
    let mut n_better = 0;
    let mut n_all = 0;
    for (j, &g) in &generated.values {
        let Some(&f) = fine_tuned.values.get(j) else {
            continue;
        };
        n_all += 1;
        if g < f {
            n_better += 1;
        }
    }
    if n_all == 0 {
        return Err(Error::UndefinedRatio);
    }
    Ok(SuccessEntry {
        update_step: fine_tuned.update_step,
        n_better,
        n_all,
        ratio: n_better as f64 / n_all as f64,
    })
}

/// Per future stage `j`, the MSEs of every curve whose update step `i`
/// satisfies `m + burn_in <= i < j`, in update-step order. Stages seen in
/// any curve but without qualifying values map to an empty list.
pub fn boxplot_matrix(curves: &[MseCurve], m: usize, burn_in: usize) -> BTreeMap<usize, Vec<f64>> {
    let mut sorted: Vec<&MseCurve> = curves.iter().collect();
    sorted.sort_by_key(|c| c.update_step);
    let mut out: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for c in sorted {
        for (&j, &v) in &c.values {
            let entry = out.entry(j).or_default();
            if c.update_step >= m + burn_in && c.update_step < j {
                entry.push(v);
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Quantile `q` by linear interpolation between order statistics
/// (position `q * (n - 1)`).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn quartiles(values: &[f64]) -> Option<Quartiles> {
    if values.is_empty() {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Some(Quartiles {
        min: s[0],
        q1: quantile(&s, 0.25),
        median: quantile(&s, 0.5),
        q3: quantile(&s, 0.75),
        max: s[s.len() - 1],
    })
}

/// Everything derived from the per-step MSE curves of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct LifecycleReport {
    pub warmup_m: usize,
    pub burn_in: usize,
    pub fine_tuned: Vec<MseCurve>,
    pub generated: Vec<MseCurve>,
    pub success: Vec<SuccessEntry>,
    pub boxplot_fine_tuned: BTreeMap<usize, Vec<f64>>,
    pub boxplot_generated: BTreeMap<usize, Vec<f64>>,
}

pub fn build_report(
    curves: Vec<(MseCurve, MseCurve)>,
    warmup_m: usize,
    burn_in: usize,
) -> Result<LifecycleReport> {
    let mut success = Vec::new();
    for (ft, gen) in &curves {
        match success_ratio(ft, gen) {
            Ok(e) => success.push(e),
            Err(Error::UndefinedRatio) => {}
            Err(e) => return Err(e),
        }
    }
    let (fine_tuned, generated): (Vec<_>, Vec<_>) = curves.into_iter().unzip();
    Ok(LifecycleReport {
        warmup_m,
        burn_in,
        boxplot_fine_tuned: boxplot_matrix(&fine_tuned, warmup_m, burn_in),
        boxplot_generated: boxplot_matrix(&generated, warmup_m, burn_in),
        fine_tuned,
        generated,
        success,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: usize,
    /// Number of scored update steps contributing to this stage.
    pub count: usize,
    pub fine_tuned: Quartiles,
    pub generated: Quartiles,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub update_steps: usize,
    /// Steps at or after `m + burn_in`.
    pub scored_steps: usize,
    pub mean_success_ratio: Option<f64>,
    pub median_success_ratio: Option<f64>,
    pub mean_fine_tuned_mse: Option<f64>,
    pub mean_generated_mse: Option<f64>,
    /// Stages whose generated median is at most the fine-tuned median.
    pub stages_generated_median_le: usize,
    pub stages_with_values: usize,
    pub stages: Vec<StageSummary>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn summarize(report: &LifecycleReport) -> Summary {
    let cutoff = report.warmup_m + report.burn_in;
    let ratios: Vec<f64> = report
        .success
        .iter()
        .filter(|e| e.update_step >= cutoff)
        .map(|e| e.ratio)
        .collect();
    let pooled = |curves: &[MseCurve]| -> Vec<f64> {
        curves
            .iter()
            .filter(|c| c.update_step >= cutoff)
            .flat_map(|c| c.values.values().copied())
            .collect()
    };
    let mut stages = Vec::new();
    for (&j, ft) in &report.boxplot_fine_tuned {
        let gen = report
            .boxplot_generated
            .get(&j)
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        if let (Some(f), Some(g)) = (quartiles(ft), quartiles(gen)) {
            stages.push(StageSummary {
                stage: j,
                count: ft.len(),
                fine_tuned: f,
                generated: g,
            });
        }
    }
    Summary {
        update_steps: report.success.len(),
        scored_steps: ratios.len(),
        mean_success_ratio: mean(&ratios),
        median_success_ratio: quartiles(&ratios).map(|q| q.median),
        mean_fine_tuned_mse: mean(&pooled(&report.fine_tuned)),
        mean_generated_mse: mean(&pooled(&report.generated)),
        stages_generated_median_le: stages
            .iter()
            .filter(|s| s.generated.median <= s.fine_tuned.median)
            .count(),
        stages_with_values: stages.len(),
        stages,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"))
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "update steps:               {}", self.update_steps)?;
        writeln!(f, "scored steps (post burn-in): {}", self.scored_steps)?;
        writeln!(
            f,
            "mean success ratio:         {}",
            opt(self.mean_success_ratio)
        )?;
        writeln!(
            f,
            "median success ratio:       {}",
            opt(self.median_success_ratio)
        )?;
        writeln!(
            f,
            "mean fine-tuned MSE:        {}",
            opt(self.mean_fine_tuned_mse)
        )?;
        writeln!(
            f,
            "mean generated MSE:         {}",
            opt(self.mean_generated_mse)
        )?;
        writeln!(
            f,
            "generated median <= fine-tuned median at {}/{} stages",
            self.stages_generated_median_le, self.stages_with_values
        )?;
        writeln!(f)?;
        writeln!(
            f,
            "{:>6} {:>5} {:>13} {:>13} {:>13} {:>13}",
            "stage", "n", "ft_median", "ft_iqr", "gen_median", "gen_iqr"
        )?;
        for s in &self.stages {
            writeln!(
                f,
                "{:>6} {:>5} {:>13.6e} {:>13.6e} {:>13.6e} {:>13.6e}",
                s.stage,
                s.count,
                s.fine_tuned.median,
                s.fine_tuned.q3 - s.fine_tuned.q1,
                s.generated.median,
                s.generated.q3 - s.generated.q1
            )?;
        }
        Ok(())
    }
}
