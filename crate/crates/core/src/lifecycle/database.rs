//! The configuration database: every stored DT configuration plus the
//! generated rollouts, persisted as raw little-endian `f64` files indexed by
//! a JSON manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{ConfigSnapshot, FnnSpec};

const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigDatabase {
    spec: FnnSpec,
    seed: u64,
    latent_dims: Vec<usize>,
    snapshots: Vec<ConfigSnapshot>,
    training_stages: BTreeSet<usize>,
    /// Update-step stage -> generated configurations for the following stages.
    rollouts: BTreeMap<usize, Vec<ConfigSnapshot>>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotEntry {
    index: usize,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct RolloutEntry {
    update_step: usize,
    count: usize,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: u32,
    layer_dims: Vec<usize>,
    spec_hash: String,
    param_count: usize,
    seed: u64,
    latent_dims: Vec<usize>,
    stages: Vec<SnapshotEntry>,
    training_stages: Vec<usize>,
    rollouts: Vec<RolloutEntry>,
}

fn write_f64s(path: &Path, values: impl Iterator<Item = f64>) -> Result<()> {
    let bytes: Vec<u8> = values.flat_map(f64::to_le_bytes).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_f64s(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 8 * expected {
        return Err(Error::format(
            path,
            format!("{} bytes, expected {}", bytes.len(), 8 * expected),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

impl ConfigDatabase {
    pub fn new(spec: FnnSpec, seed: u64) -> Self {
        ConfigDatabase {
            spec,
            seed,
            latent_dims: Vec::new(),
            snapshots: Vec::new(),
            training_stages: BTreeSet::new(),
            rollouts: BTreeMap::new(),
        }
    }

    pub fn spec(&self) -> &FnnSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn latent_dims(&self) -> &[usize] {
        &self.latent_dims
    }

    pub fn set_latent_dims(&mut self, dims: Vec<usize>) {
        self.latent_dims = dims;
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Stored configurations; position equals stage index.
    pub fn snapshots(&self) -> &[ConfigSnapshot] {
        &self.snapshots
    }

    pub fn get(&self, stage: usize) -> Option<&ConfigSnapshot> {
        self.snapshots.get(stage)
    }

    pub fn latest(&self) -> Option<&ConfigSnapshot> {
        self.snapshots.last()
    }

    /// Append the configuration of the next stage.
    pub fn push(&mut self, snapshot: ConfigSnapshot) -> Result<()> {
        snapshot.check(&self.spec)?;
        if snapshot.stage_index != self.snapshots.len() {
            return Err(Error::StageOrder {
                expected: self.snapshots.len(),
                got: snapshot.stage_index,
            });
        }
        self.snapshots.push(snapshot);
        Ok(())
    }

    /// Record that the dataset of `stage` was used for training.
    pub fn record_training_stage(&mut self, stage: usize) {
        self.training_stages.insert(stage);
    }

    pub fn training_stages(&self) -> &BTreeSet<usize> {
        &self.training_stages
    }

    /// Store the configurations generated at update step `stage`; they must
    /// be labeled `stage + 1, stage + 2, ...`.
    pub fn set_rollout(&mut self, stage: usize, generated: Vec<ConfigSnapshot>) -> Result<()> {
        for (k, s) in generated.iter().enumerate() {
            s.check(&self.spec)?;
            if s.stage_index != stage + 1 + k {
                return Err(Error::StageOrder {
                    expected: stage + 1 + k,
                    got: s.stage_index,
                });
            }
        }
        self.rollouts.insert(stage, generated);
        Ok(())
    }

    pub fn rollouts(&self) -> &BTreeMap<usize, Vec<ConfigSnapshot>> {
        &self.rollouts
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut stages = Vec::with_capacity(self.snapshots.len());
        for s in &self.snapshots {
            let file = format!("theta_{}.bin", s.stage_index);
            write_f64s(&dir.join(&file), s.layers.iter().flatten().copied())?;
            stages.push(SnapshotEntry {
                index: s.stage_index,
                file,
            });
        }
        let mut rollouts = Vec::with_capacity(self.rollouts.len());
        if !self.rollouts.is_empty() {
            let rdir = dir.join("rollouts");
            fs::create_dir_all(&rdir).map_err(|e| Error::io(&rdir, e))?;
            for (&step, gen) in &self.rollouts {
                let file = format!("rollouts/step_{step}.bin");
                write_f64s(
                    &dir.join(&file),
                    gen.iter().flat_map(|s| s.layers.iter().flatten().copied()),
                )?;
                rollouts.push(RolloutEntry {
                    update_step: step,
                    count: gen.len(),
                    file,
                });
            }
        }
        let manifest = Manifest {
            format: FORMAT_VERSION,
            layer_dims: self.spec.layer_dims().to_vec(),
            spec_hash: self.spec.hash(),
            param_count: self.spec.param_count(),
            seed: self.seed,
            latent_dims: self.latent_dims.clone(),
            stages,
            training_stages: self.training_stages.iter().copied().collect(),
            rollouts,
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Load a database; with `expected` set, its architecture must match.
    pub fn load(dir: &Path, expected: Option<&FnnSpec>) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if m.format != FORMAT_VERSION {
            return Err(Error::format(
                &path,
                format!("unsupported format {}", m.format),
            ));
        }
        let spec = FnnSpec::new(m.layer_dims).map_err(|e| Error::format(&path, e.to_string()))?;
        if spec.hash() != m.spec_hash || spec.param_count() != m.param_count {
            return Err(Error::format(&path, "spec hash does not match layer dims"));
        }
        if let Some(exp) = expected {
            if exp.hash() != spec.hash() {
                return Err(Error::SpecMismatch {
                    expected: exp.hash(),
                    found: spec.hash(),
                });
            }
        }
        let n = spec.param_count();
        let mut db = ConfigDatabase::new(spec, m.seed);
        db.latent_dims = m.latent_dims;
        for entry in m.stages {
            let flat = read_f64s(&dir.join(&entry.file), n)?;
            db.push(ConfigSnapshot::from_flat(&db.spec, entry.index, &flat)?)?;
        }
        db.training_stages = m.training_stages.into_iter().collect();
        for entry in m.rollouts {
            let flat = read_f64s(&dir.join(&entry.file), n * entry.count)?;
            let gen = flat
                .chunks_exact(n.max(1))
                .enumerate()
                .map(|(k, c)| ConfigSnapshot::from_flat(&db.spec, entry.update_step + 1 + k, c))
                .collect::<Result<Vec<_>>>()?;
            db.set_rollout(entry.update_step, gen)?;
        }
        Ok(db)
    }
}
