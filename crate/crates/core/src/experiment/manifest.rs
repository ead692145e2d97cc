use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub software_version: String,
    pub subcommand: String,
    /// Hash of the configuration with `workers` and `outputs.dir` blanked,
    /// so it identifies the experiment rather than where or how fast it ran.
    pub config_hash: String,
    pub master_seed: u64,
    pub workers: usize,
    pub wall_clock_seconds: f64,
    pub flagged_paths: BTreeMap<String, usize>,
    /// Every file written by the run except the manifest itself, by name.
    pub artifacts: Vec<ArtifactEntry>,
    pub pass: usize,
    pub fail: usize,
    pub info: usize,
}

impl RunManifest {
    pub fn failed(&self) -> bool {
        self.fail > 0
    }

    /// `(path, sha256)` pairs, the part that must not depend on scheduling.
    pub fn checksums(&self) -> Vec<(String, String)> {
        self.artifacts
            .iter()
            .map(|a| (a.path.clone(), a.sha256.clone()))
            .collect()
    }
}

/// Files produced by a run, held in memory and written in name order.
#[derive(Debug, Default)]
pub struct Artifacts {
    files: BTreeMap<String, Vec<u8>>,
}

impl Artifacts {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.insert(name.into(), bytes);
    }

    pub fn write_all(&self, dir: &Path) -> Result<Vec<ArtifactEntry>> {
        std::fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes)?;
            entries.push(ArtifactEntry {
                path: name.clone(),
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
            });
        }
        Ok(entries)
    }
}
