//! Run manifests: what is needed to regenerate a result directory, and a
//! check that a directory still matches its manifest.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{Error, Result};
use crate::experiments::{execute, RunSummary, SkipSummary, TRIAL_SEED_RULE};
use crate::random::RNG_ALGORITHM;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub library_version: String,
    pub rng_algorithm: String,
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub graph_seeds: Vec<u64>,
    pub trial_seed_rule: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub skips: SkipSummary,
    /// SHA-256 of every written file, keyed by path relative to the run
    /// directory.
    pub files: BTreeMap<String, String>,
    /// SHA-256 of the result table of [`slice_config`].
    pub slice_hash: String,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// The config reduced to one graph and one trial.
pub fn slice_config(cfg: &ExperimentConfig) -> ExperimentConfig {
    let mut s = cfg.clone();
    let c = &mut s.counts;
    c.graphs = 1;
    c.trials = 1;
    if s.experiment == ExperimentKind::Fig3 {
        c.train_graphs = c.train_graphs.min(4);
        c.test_graphs = c.test_graphs.min(2);
        c.max_edges = c.max_edges.min(2);
    }
    s
}

pub fn slice_hash(cfg: &ExperimentConfig) -> Result<String> {
    Ok(sha256_hex(&execute(&slice_config(cfg))?.results_csv))
}

fn hash_tree(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut files = BTreeMap::new();
    for name in ["results.csv", "report.json", "dataset.json", "train_log.csv"] {
        let p = dir.join(name);
        if p.exists() {
            files.insert(name.to_string(), sha256_file(&p)?);
        }
    }
    let gdir = dir.join("graphs");
    if gdir.is_dir() {
        let mut names: Vec<String> = std::fs::read_dir(&gdir)
            .map_err(|e| Error::io(&gdir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        for n in names {
            files.insert(format!("graphs/{n}"), sha256_file(&gdir.join(&n))?);
        }
    }
    Ok(files)
}

/// Hashes the files of a finished run and writes `manifest.json`.
pub fn write_manifest(
    dir: &Path,
    cfg: &ExperimentConfig,
    summary: &RunSummary,
    started_unix: u64,
) -> Result<RunManifest> {
    let manifest = RunManifest {
        library_version: env!("CARGO_PKG_VERSION").into(),
        rng_algorithm: RNG_ALGORITHM.into(),
        experiment: cfg.experiment,
        seed: cfg.seed,
        config: cfg.clone(),
        graph_seeds: summary.graph_seeds.clone(),
        trial_seed_rule: TRIAL_SEED_RULE.into(),
        started_unix,
        finished_unix: unix_now(),
        skips: summary.skips,
        files: hash_tree(dir)?,
        slice_hash: slice_hash(cfg)?,
    };
    crate::experiments::write_json(&manifest, &dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::ManifestAbsent(path));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Whether every recorded file is unchanged and a re-executed slice
/// reproduces the recorded slice hash.
pub fn verify_manifest(dir: &Path) -> Result<bool> {
    let m = load_manifest(dir)?;
    if hash_tree(dir)? != m.files {
        return Ok(false);
    }
    Ok(slice_hash(&m.config)? == m.slice_hash)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha_of_empty() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn slice_is_small() {
        let s = slice_config(&ExperimentConfig::defaults(ExperimentKind::Fig3));
        assert_eq!((s.counts.train_graphs, s.counts.test_graphs, s.counts.trials), (4, 2, 1));
    }
}
