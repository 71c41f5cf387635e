//! Per-stage artifact manifests: config hash, input/output file hashes,
//! and record counts. Two runs with equal config and input hashes must
//! produce equal output hashes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qgen_core::hashing::sha256_hex;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    /// File name -> sha256 of each input the stage read.
    pub input_hashes: BTreeMap<String, String>,
    /// File name -> sha256 of each artifact the stage wrote.
    pub output_hashes: BTreeMap<String, String>,
    pub record_counts: BTreeMap<String, u64>,
}

impl StageManifest {
    pub fn new(stage: &str, config_hash: String, seed: u64) -> Self {
        StageManifest {
            stage: stage.to_string(),
            config_hash,
            seed,
            input_hashes: BTreeMap::new(),
            output_hashes: BTreeMap::new(),
            record_counts: BTreeMap::new(),
        }
    }

    pub fn record_input(&mut self, path: &Path) -> std::io::Result<()> {
        self.input_hashes.insert(file_key(path), hash_file(path)?);
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) -> std::io::Result<()> {
        self.output_hashes.insert(file_key(path), hash_file(path)?);
        Ok(())
    }

    pub fn count(&mut self, what: &str, n: u64) {
        self.record_counts.insert(what.to_string(), n);
    }

    pub fn write(&self, out_dir: &Path) -> std::io::Result<PathBuf> {
        let name = format!("manifest_{}.json", self.stage.replace('-', "_"));
        let path = out_dir.join(name);
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, json)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}

fn file_key(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn hash_file(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}
