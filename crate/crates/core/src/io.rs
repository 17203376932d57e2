//! On-disk dataset format and small file helpers.
//!
//! A dataset directory holds `manifest.json` plus one raw file per sequence,
//! `env{k}_{train|test}_{n}.f64`, each a little-endian `f64` row-major
//! `T x d` block.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dynsys::{EnvironmentDataset, IntegratorConfig, StandardizationStats, SystemKind, SystemSpec, Trajectory};
use crate::error::{ensure, Error, Result};

pub const DATASET_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Where and when a file was produced. The only part of any output that is
/// allowed to change between identical invocations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub created_unix: u64,
}

impl Provenance {
    pub fn now() -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

pub fn sequence_file_name(env: usize, split: Split, index: usize) -> String {
    format!("env{env}_{}_{index}.f64", split.name())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentEntry {
    pub spec: SystemSpec,
    pub train: usize,
    pub test: usize,
    pub standardization: StandardizationStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub system: SystemKind,
    pub dim: usize,
    pub steps: usize,
    /// Seed the trajectories were generated from (equals `integrator.rng_seed`).
    pub seed: u64,
    pub integrator: IntegratorConfig,
    pub environments: Vec<EnvironmentEntry>,
    pub provenance: Provenance,
}

pub fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path.display().to_string(), e)
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Integrity { path: path.to_path_buf(), reason: e.to_string() })
}

pub fn f64s_to_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn write_f64s(path: &Path, values: &[f64]) -> Result<()> {
    fs::write(path, f64s_to_bytes(values)).map_err(io_err(path))
}

/// Reads exactly `expected` little-endian `f64`s, rejecting short or long files.
pub fn read_f64s(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() != expected * 8 {
        return Err(Error::Integrity {
            path: path.to_path_buf(),
            reason: format!("expected {} bytes, found {}", expected * 8, bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of 8")))
        .collect())
}

/// Writes `data` under `dir` (created if needed) and returns the manifest.
pub fn write_dataset(dir: &Path, data: &[EnvironmentDataset], integrator: &IntegratorConfig) -> Result<DatasetManifest> {
    ensure!(!data.is_empty(), "cannot write an empty dataset");
    create_dir(dir)?;
    let first = data[0].train.first().or_else(|| data[0].test.first());
    let (steps, dim) = first.map_or((0, data[0].spec.dim()), |t| (t.len(), t.dim()));
    for (k, env) in data.iter().enumerate() {
        for (split, seqs) in [(Split::Train, &env.train), (Split::Test, &env.test)] {
            for (n, seq) in seqs.iter().enumerate() {
                ensure!(seq.len() == steps && seq.dim() == dim, "sequences must share one shape");
                write_f64s(&dir.join(sequence_file_name(k, split, n)), seq.values())?;
            }
        }
    }
    let manifest = DatasetManifest {
        schema_version: DATASET_SCHEMA_VERSION,
        system: data[0].spec.kind(),
        dim,
        steps,
        seed: integrator.rng_seed,
        integrator: integrator.clone(),
        environments: data
            .iter()
            .map(|e| EnvironmentEntry {
                spec: e.spec.clone(),
                train: e.train.len(),
                test: e.test.len(),
                standardization: e.standardization.clone(),
            })
            .collect(),
        provenance: Provenance::now(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let manifest: DatasetManifest = read_json(&path)?;
    if manifest.schema_version != DATASET_SCHEMA_VERSION {
        return Err(Error::SchemaVersion { found: manifest.schema_version, expected: DATASET_SCHEMA_VERSION });
    }
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<EnvironmentDataset>)> {
    let manifest = read_manifest(dir)?;
    let (steps, dim) = (manifest.steps, manifest.dim);
    let load = |k: usize, split: Split, n: usize| -> Result<Trajectory> {
        let path: PathBuf = dir.join(sequence_file_name(k, split, n));
        let values = read_f64s(&path, steps * dim)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integrity { path, reason: "non-finite sample".into() });
        }
        Trajectory::from_rows(steps, dim, values, k)
    };
    let mut data = Vec::with_capacity(manifest.environments.len());
    for (k, entry) in manifest.environments.iter().enumerate() {
        if entry.spec.dim() != dim {
            return Err(Error::Integrity {
                path: dir.join(MANIFEST_FILE),
                reason: format!("environment {k} has dimension {} but the dataset has {dim}", entry.spec.dim()),
            });
        }
        data.push(EnvironmentDataset {
            spec: entry.spec.clone(),
            train: (0..entry.train).map(|n| load(k, Split::Train, n)).collect::<Result<_>>()?,
            test: (0..entry.test).map(|n| load(k, Split::Test, n)).collect::<Result<_>>()?,
            standardization: entry.standardization.clone(),
        });
    }
    Ok((manifest, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::build_continual_dataset;
    use crate::exec::Execution;

    fn small_dataset() -> (IntegratorConfig, Vec<EnvironmentDataset>) {
        let cfg = IntegratorConfig { steps_per_sequence: 30, sequences_per_env: 3, train_sequences: 2, rng_seed: 9, ..Default::default() };
        let specs = [SystemSpec::VanDerPol { mu: 0.5 }, SystemSpec::VanDerPol { mu: 2.0 }];
        let data = build_continual_dataset(&specs, &cfg, Execution::Sequential).unwrap();
        (cfg, data)
    }

    #[test]
    fn dataset_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (cfg, data) = small_dataset();
        let written = write_dataset(dir.path(), &data, &cfg).unwrap();
        let (manifest, back) = read_dataset(dir.path()).unwrap();
        assert_eq!(manifest, written);
        assert_eq!(back, data);
        assert!(dir.path().join("env1_test_0.f64").exists());
        assert_eq!(fs::metadata(dir.path().join("env0_train_1.f64")).unwrap().len(), 30 * 2 * 8);
    }

    #[test]
    fn manifest_numbers_are_strings() {
        let dir = tempfile::tempdir().unwrap();
        let (cfg, data) = small_dataset();
        write_dataset(dir.path(), &data, &cfg).unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(text.contains("\"mu\": \"0.5\""));
        assert!(text.contains("\"dt_out\": \"0.05\""));
    }

    #[test]
    fn truncated_sequence_is_an_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let (cfg, data) = small_dataset();
        write_dataset(dir.path(), &data, &cfg).unwrap();
        let path = dir.path().join("env0_test_0.f64");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Integrity { .. }), "{err}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (cfg, data) = small_dataset();
        let mut manifest = write_dataset(dir.path(), &data, &cfg).unwrap();
        manifest.schema_version = 99;
        write_json(&dir.path().join(MANIFEST_FILE), &manifest).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::SchemaVersion { found: 99, .. })));
    }

    #[test]
    fn missing_directory_is_io_error() {
        let err = read_dataset(Path::new("/nonexistent/mhrc-data")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
