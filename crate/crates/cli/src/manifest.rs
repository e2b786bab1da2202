//! Per-stage manifest: enough to rerun the stage from nothing else.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub backend: String,
    pub versions: BTreeMap<String, String>,
    /// SHA-256 of each input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    pub config: RunConfig,
}

pub fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("bbsea-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        (
            "checkpoint".to_string(),
            bbsea_core::policy::CHECKPOINT_VERSION.to_string(),
        ),
    ])
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig, backend: &str) -> Self {
        Self {
            command: command.to_string(),
            seed: config.seed,
            config_hash: config.hash(),
            backend: backend.to_string(),
            versions: versions(),
            inputs: BTreeMap::new(),
            config: config.clone(),
        }
    }

    pub fn input(mut self, path: &Path) -> Result<Self> {
        self.inputs.insert(path.display().to_string(), file_hash(path)?);
        Ok(self)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n")
            .with_context(|| format!("writing manifest in {}", dir.display()))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("x");
        std::fs::write(&input, b"abc").unwrap();
        let m = Manifest::new("train", &RunConfig::default(), "oracle").input(&input).unwrap();
        m.write(dir.path()).unwrap();
        let back = Manifest::read(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(
            back.inputs.values().next().unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
