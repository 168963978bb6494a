//! CSV export of MSE curves, success ratios, and boxplot matrices.

use std::collections::BTreeMap;
use std::path::Path;

use super::{MseCurve, Source, SuccessEntry};
use crate::error::{Error, Result};

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::WriterBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

/// `update_step,future_stage,source,mse`, one row per curve point.
pub fn write_mse_curves(path: &Path, curves: &[&MseCurve]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["update_step", "future_stage", "source", "mse"])
        .map_err(|e| csv_error(path, e))?;
    for c in curves {
        for (j, v) in &c.values {
            w.write_record([
                c.update_step.to_string(),
                j.to_string(),
                c.source.to_string(),
                v.to_string(),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parse a file written by [`write_mse_curves`], grouping rows back into
/// curves ordered by `(update_step, source)`.
pub fn read_mse_curves(path: &Path) -> Result<Vec<MseCurve>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut curves: BTreeMap<(usize, Source), BTreeMap<usize, f64>> = BTreeMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let bad = |what: &str| Error::format(path, format!("row {row}: bad {what}"));
        let field = |k: usize| rec.get(k).unwrap_or("");
        let step: usize = field(0).parse().map_err(|_| bad("update_step"))?;
        let stage: usize = field(1).parse().map_err(|_| bad("future_stage"))?;
        let source: Source = field(2).parse().map_err(|_| bad("source"))?;
        let mse: f64 = field(3).parse().map_err(|_| bad("mse"))?;
        curves.entry((step, source)).or_default().insert(stage, mse);
    }
    Ok(curves
        .into_iter()
        .map(|((update_step, source), values)| MseCurve {
            update_step,
            source,
            values,
        })
        .collect())
}

/// `update_step,n_better,n_all,ratio`.
pub fn write_success_ratio(path: &Path, entries: &[SuccessEntry]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["update_step", "n_better", "n_all", "ratio"])
        .map_err(|e| csv_error(path, e))?;
    for e in entries {
        w.write_record([
            e.update_step.to_string(),
            e.n_better.to_string(),
            e.n_all.to_string(),
            e.ratio.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `future_stage,source,values...`: one row per stage and source, holding
/// every collected MSE in update-step order.
pub fn write_boxplot(
    path: &Path,
    fine_tuned: &BTreeMap<usize, Vec<f64>>,
    generated: &BTreeMap<usize, Vec<f64>>,
) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["future_stage", "source", "values"])
        .map_err(|e| csv_error(path, e))?;
    for (source, matrix) in [
        (Source::FineTuned, fine_tuned),
        (Source::Generated, generated),
    ] {
        for (j, vals) in matrix {
            let mut rec = vec![j.to_string(), source.to_string()];
            rec.extend(vals.iter().map(f64::to_string));
            w.write_record(&rec).map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
