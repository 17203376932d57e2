//! Reservoir and learner checkpoints.
//!
//! Reservoir weights are never stored: `reservoir.json` records the config
//! and input dimension and the weights are regenerated from the seed. A
//! learner checkpoint directory holds `learner.json` plus `head{l}.f64`
//! (the head's `A` then `B`, little-endian `f64`, row-major).

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decimal;
use crate::error::{Error, Result};
use crate::federated::HeadAccumulator;
use crate::io::{create_dir, read_f64s, read_json, write_json, Provenance};
use crate::multihead::{LearnerConfig, MultiHeadLearner};
use crate::reservoir::{init_reservoir, ReservoirConfig, ReservoirWeights};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;
pub const RESERVOIR_FILE: &str = "reservoir.json";
pub const LEARNER_FILE: &str = "learner.json";

pub fn head_file_name(l: usize) -> String {
    format!("head{l}.f64")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservoirManifest {
    pub schema_version: u32,
    pub config: ReservoirConfig,
    pub seed: u64,
    pub input_dim: usize,
}

impl ReservoirManifest {
    pub fn new(config: &ReservoirConfig, input_dim: usize) -> Self {
        Self { schema_version: CHECKPOINT_SCHEMA_VERSION, config: config.clone(), seed: config.seed, input_dim }
    }

    pub fn build(&self) -> Result<ReservoirWeights> {
        init_reservoir(&self.config, self.input_dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    /// 32-byte ChaCha key, hex encoded.
    pub key: String,
    /// Word position in the keystream, as a decimal string (it is a u128).
    pub word_pos: String,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            key: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    fn restore(&self, path: &Path) -> Result<ChaCha8Rng> {
        let bad = |reason: &str| Error::Integrity { path: path.to_path_buf(), reason: reason.to_string() };
        if self.key.len() != 64 {
            return Err(bad("rng key must be 64 hex digits"));
        }
        let mut key = [0u8; 32];
        for (i, b) in key.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.key[2 * i..2 * i + 2], 16).map_err(|_| bad("rng key is not hex"))?;
        }
        let pos: u128 = self.word_pos.parse().map_err(|_| bad("rng word position is not an integer"))?;
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerManifest {
    pub schema_version: u32,
    pub reservoir: ReservoirManifest,
    pub learner: LearnerConfig,
    pub active: Vec<usize>,
    pub never_active: Vec<usize>,
    pub prev_active: Vec<usize>,
    #[serde(with = "decimal::opt_vec")]
    pub mse_last: Vec<Option<f64>>,
    pub update_counts: Vec<u64>,
    pub rng: RngState,
    pub sequences_seen: u64,
    pub provenance: Provenance,
}

fn check_version(found: u32) -> Result<()> {
    if found != CHECKPOINT_SCHEMA_VERSION {
        return Err(Error::SchemaVersion { found, expected: CHECKPOINT_SCHEMA_VERSION });
    }
    Ok(())
}

pub fn save_reservoir(dir: &Path, config: &ReservoirConfig, input_dim: usize) -> Result<()> {
    create_dir(dir)?;
    write_json(&dir.join(RESERVOIR_FILE), &ReservoirManifest::new(config, input_dim))
}

pub fn load_reservoir(dir: &Path) -> Result<(ReservoirManifest, ReservoirWeights)> {
    let manifest: ReservoirManifest = read_json(&dir.join(RESERVOIR_FILE))?;
    check_version(manifest.schema_version)?;
    if manifest.seed != manifest.config.seed {
        return Err(Error::Integrity {
            path: dir.join(RESERVOIR_FILE),
            reason: "seed disagrees with config.seed".into(),
        });
    }
    let weights = manifest.build()?;
    Ok((manifest, weights))
}

/// Writes the learner state into `dir` (created if needed).
pub fn save_learner(dir: &Path, learner: &MultiHeadLearner) -> Result<()> {
    create_dir(dir)?;
    for (l, head) in learner.heads.iter().enumerate() {
        std::fs::write(dir.join(head_file_name(l)), head.statistics_bytes()).map_err(crate::io::io_err(&dir.join(head_file_name(l))))?;
    }
    let manifest = LearnerManifest {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        reservoir: ReservoirManifest::new(&learner.reservoir_cfg, learner.dim),
        learner: learner.cfg.clone(),
        active: learner.active.iter().copied().collect(),
        never_active: learner.never_active.iter().copied().collect(),
        prev_active: learner.prev_active.iter().copied().collect(),
        mse_last: learner.mse_last.clone(),
        update_counts: learner.heads.iter().map(|h| h.update_count()).collect(),
        rng: RngState::capture(&learner.rng),
        sequences_seen: learner.sequences_seen,
        provenance: Provenance::now(),
    };
    write_json(&dir.join(LEARNER_FILE), &manifest)
}

pub fn read_learner_manifest(dir: &Path) -> Result<LearnerManifest> {
    let manifest: LearnerManifest = read_json(&dir.join(LEARNER_FILE))?;
    check_version(manifest.schema_version)?;
    check_version(manifest.reservoir.schema_version)?;
    Ok(manifest)
}

/// Loads a learner, regenerating its reservoir from the stored seed.
pub fn load_learner(dir: &Path) -> Result<MultiHeadLearner> {
    let manifest = read_learner_manifest(dir)?;
    let weights = Arc::new(manifest.reservoir.build()?);
    assemble(dir, manifest, weights)
}

/// Loads a learner onto an existing reservoir. Fails if the checkpoint was
/// made with a different reservoir config or input dimension.
pub fn load_learner_with_reservoir(
    dir: &Path,
    config: &ReservoirConfig,
    weights: Arc<ReservoirWeights>,
) -> Result<MultiHeadLearner> {
    let manifest = read_learner_manifest(dir)?;
    if manifest.reservoir.config != *config || manifest.reservoir.input_dim != weights.input_dim() {
        return Err(Error::Config(format!(
            "checkpoint in {} was made with a different reservoir (config or input dimension mismatch)",
            dir.display()
        )));
    }
    assemble(dir, manifest, weights)
}

fn assemble(dir: &Path, manifest: LearnerManifest, weights: Arc<ReservoirWeights>) -> Result<MultiHeadLearner> {
    let path = dir.join(LEARNER_FILE);
    let bad = |reason: String| Error::Integrity { path: path.clone(), reason };
    let cfg = &manifest.learner;
    cfg.validate()?;
    let l = cfg.num_heads;
    if manifest.mse_last.len() != l || manifest.update_counts.len() != l {
        return Err(bad(format!("expected per-head entries for {l} heads")));
    }
    let sets = [&manifest.active, &manifest.never_active, &manifest.prev_active];
    if sets.iter().any(|s| s.iter().any(|&h| h >= l)) {
        return Err(bad("head index out of range".into()));
    }
    let (m, d) = (manifest.reservoir.config.size, manifest.reservoir.input_dim);
    let mut learner = MultiHeadLearner::with_reservoir(&manifest.reservoir.config, weights, cfg)?;
    for (i, head) in learner.heads.iter_mut().enumerate() {
        let values = read_f64s(&dir.join(head_file_name(i)), m * m + m * d)?;
        let gram = DMatrix::from_row_slice(m, m, &values[..m * m]);
        let cross = DMatrix::from_row_slice(m, d, &values[m * m..]);
        *head = HeadAccumulator::from_statistics(gram, cross, cfg.lambda, manifest.update_counts[i])?;
    }
    learner.mse_last = manifest.mse_last;
    learner.active = manifest.active.into_iter().collect();
    learner.never_active = manifest.never_active.into_iter().collect();
    learner.prev_active = manifest.prev_active.into_iter().collect();
    learner.rng = manifest.rng.restore(&path)?;
    learner.sequences_seen = manifest.sequences_seen;
    Ok(learner)
}
