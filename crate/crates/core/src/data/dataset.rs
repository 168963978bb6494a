use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub unit: String,
}

impl Column {
    pub fn new(name: &str, unit: &str) -> Self {
        Column {
            name: name.to_string(),
            unit: unit.to_string(),
        }
    }
}

/// Input/output samples measured at one degradation stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageDataset {
    pub stage_index: usize,
    /// `n x d_in`
    pub x: Tensor,
    /// `n x d_out`
    pub y: Tensor,
    pub inputs: Vec<Column>,
    pub outputs: Vec<Column>,
}

impl StageDataset {
    pub fn new(
        stage_index: usize,
        x: Tensor,
        y: Tensor,
        inputs: Vec<Column>,
        outputs: Vec<Column>,
    ) -> Result<Self> {
        let ds = StageDataset {
            stage_index,
            x,
            y,
            inputs,
            outputs,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let err = |message: String| Error::Data {
            stage: self.stage_index,
            message,
        };
        if !self.x.is_matrix() || !self.y.is_matrix() {
            return Err(err("inputs and outputs must be 2-D".into()));
        }
        if self.x.rows() != self.y.rows() {
            return Err(err(format!(
                "{} input rows but {} output rows",
                self.x.rows(),
                self.y.rows()
            )));
        }
        if self.x.cols() != self.inputs.len() || self.y.cols() != self.outputs.len() {
            return Err(err(format!(
                "column names ({} in, {} out) do not match data ({} in, {} out)",
                self.inputs.len(),
                self.outputs.len(),
                self.x.cols(),
                self.y.cols()
            )));
        }
        if !self.x.all_finite() || !self.y.all_finite() {
            return Err(err("non-finite value".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub index: usize,
    pub file: String,
}

/// Run manifest: column roles, applied preprocessing, and one CSV per stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_name: String,
    pub d_in: usize,
    pub d_out: usize,
    pub inputs: Vec<Column>,
    pub outputs: Vec<Column>,
    #[serde(default)]
    pub preprocessing: Vec<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    pub stages: Vec<StageEntry>,
}

/// A loaded run with contiguous stage indices.
#[derive(Clone, Debug)]
pub struct Run {
    pub manifest: RunManifest,
    pub stages: Vec<StageDataset>,
    /// Original index -> contiguous index, for every stage that moved.
    pub reindexed: BTreeMap<usize, usize>,
}

fn format_value(v: f64) -> String {
    // `Display` for f64 is the shortest string that parses back to the same bits.
    format!("{v}")
}

fn write_stage_csv(path: &Path, ds: &StageDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<&str> = ds
        .inputs
        .iter()
        .chain(&ds.outputs)
        .map(|c| c.name.as_str())
        .collect();
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in 0..ds.len() {
        let rec: Vec<String> =
            ds.x.row_slice(r)
                .iter()
                .chain(ds.y.row_slice(r))
                .map(|&v| format_value(v))
                .collect();
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

/// Write a run directory: `manifest.json` plus `stage_<i>.csv` files.
pub fn write_run(
    dir: &Path,
    run_name: &str,
    stages: &[StageDataset],
    preprocessing: &[String],
    seed: Option<u64>,
) -> Result<PathBuf> {
    let first = stages.first().ok_or(Error::Empty("stage list"))?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(stages.len());
    for ds in stages {
        ds.validate()?;
        if ds.inputs != first.inputs || ds.outputs != first.outputs {
            return Err(Error::Data {
                stage: ds.stage_index,
                message: "columns differ from the first stage".into(),
            });
        }
        let file = format!("stage_{:04}.csv", ds.stage_index);
        write_stage_csv(&dir.join(&file), ds)?;
        entries.push(StageEntry {
            index: ds.stage_index,
            file,
        });
    }
    let manifest = RunManifest {
        run_name: run_name.to_string(),
        d_in: first.inputs.len(),
        d_out: first.outputs.len(),
        inputs: first.inputs.clone(),
        outputs: first.outputs.clone(),
        preprocessing: preprocessing.to_vec(),
        seed,
        stages: entries,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn read_stage_csv(path: &Path, manifest: &RunManifest, stage: usize) -> Result<StageDataset> {
    let data_err = |message: String| Error::Data { stage, message };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match csv_err(path, e) {
        Error::Io { source, .. } => data_err(format!("cannot read {}: {source}", path.display())),
        other => other,
    })?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let expected: Vec<&str> = manifest
        .inputs
        .iter()
        .chain(&manifest.outputs)
        .map(|c| c.name.as_str())
        .collect();
    if header != expected {
        return Err(data_err(format!(
            "header {header:?}, expected {expected:?}"
        )));
    }
    let (d_in, d_out) = (manifest.inputs.len(), manifest.outputs.len());
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != d_in + d_out {
            return Err(data_err(format!("row {row} has {} fields", rec.len())));
        }
        for (k, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| data_err(format!("row {row}: cannot parse '{field}'")))?;
            if !v.is_finite() {
                return Err(data_err(format!("row {row}: non-finite value")));
            }
            if k < d_in {
                xs.push(v);
            } else {
                ys.push(v);
            }
        }
    }
    let n = xs.len() / d_in.max(1);
    if n == 0 {
        return Err(data_err("no samples".into()));
    }
    StageDataset::new(
        stage,
        Tensor::matrix(n, d_in, xs)?,
        Tensor::matrix(n, d_out, ys)?,
        manifest.inputs.clone(),
        manifest.outputs.clone(),
    )
}

/// Load every stage listed in a run manifest, in index order.
///
/// Gaps in the stage indices are closed by re-indexing contiguously from 0;
/// the mapping is logged and returned.
pub fn load_run(manifest_path: &Path) -> Result<Run> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: RunManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(manifest_path, e.to_string()))?;
    if manifest.stages.is_empty() {
        return Err(Error::Empty("run manifest stage list"));
    }
    if manifest.inputs.len() != manifest.d_in || manifest.outputs.len() != manifest.d_out {
        return Err(Error::format(
            manifest_path,
            "column lists disagree with d_in/d_out",
        ));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut entries = manifest.stages.clone();
    entries.sort_by_key(|e| e.index);
    if let Some(dup) = entries.windows(2).find(|p| p[0].index == p[1].index) {
        return Err(Error::format(
            manifest_path,
            format!("stage {} listed twice", dup[0].index),
        ));
    }
    let mut reindexed = BTreeMap::new();
    let mut stages = Vec::with_capacity(entries.len());
    for (new_index, entry) in entries.iter().enumerate() {
        let mut ds = read_stage_csv(&base.join(&entry.file), &manifest, entry.index)?;
        if entry.index != new_index {
            reindexed.insert(entry.index, new_index);
            ds.stage_index = new_index;
        }
        stages.push(ds);
    }
    if !reindexed.is_empty() {
        log::warn!(
            "stage indices of run '{}' had gaps; re-indexed {:?}",
            manifest.run_name,
            reindexed
        );
    }
    Ok(Run {
        manifest,
        stages,
        reindexed,
    })
}
