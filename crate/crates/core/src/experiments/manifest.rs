//! Run manifests, written before any training starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    /// Exact configuration text the run was started from.
    pub config: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub outputs: Vec<PathBuf>,
    pub crate_version: String,
}

/// Git-style blob hash: SHA-256 over `"blob <len>\0" ++ content`, hex encoded.
pub fn content_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex::encode(h.finalize())
}

impl RunManifest {
    pub fn new(experiment: &str, config: String, seeds: Vec<u64>, outputs: Vec<PathBuf>) -> Self {
        Self {
            experiment: experiment.to_string(),
            config_hash: content_hash(config.as_bytes()),
            config,
            seeds,
            outputs,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_content_sensitive() {
        let a = content_hash(b"seed = 1\n");
        assert_eq!(a, content_hash(b"seed = 1\n"));
        assert_ne!(a, content_hash(b"seed = 2\n"));
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest::new("train", "seed = 3\n".into(), vec![3], vec!["metrics.jsonl".into()]);
        m.write(dir.path()).unwrap();
        assert_eq!(RunManifest::read(dir.path()).unwrap(), m);
    }
}
