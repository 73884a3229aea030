use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use mlgc::Result;

/// Files that make up a dataset or synthetic directory, in hashing order.
const DATASET_FILES: [&str; 6] = ["meta.json", "edges.tsv", "features.tsv", "labels.tsv", "split.tsv", "adj.tsv"];

/// SHA-256 over the dataset files present in `dir`, each prefixed by its name.
pub fn hash_dataset(dir: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    for name in DATASET_FILES {
        let path = dir.join(name);
        if path.exists() {
            hasher.update(name.as_bytes());
            hasher.update([0]);
            hasher.update(fs::read(path)?);
        }
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn hash_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Record of one run: enough to repeat it and check its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: &'static str,
    pub command: String,
    /// Full argument vector of the run.
    pub args: Vec<String>,
    pub seed: u64,
    pub config: serde_json::Value,
    pub input_hashes: BTreeMap<String, String>,
    pub status: &'static str,
    pub wall_seconds: Option<f64>,
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, args: &[String], seed: u64, config: serde_json::Value) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            args: args.to_vec(),
            seed,
            config,
            input_hashes: BTreeMap::new(),
            status: "running",
            wall_seconds: None,
            outputs: BTreeMap::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
