//! Run manifests: enough to reproduce a command's outputs.

use std::path::Path;
use std::process::Command;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub args: Vec<String>,
    /// SHA-256 of the effective configuration text.
    pub config_sha256: String,
    pub config: String,
    pub seeds: Vec<u64>,
    pub commit: String,
    pub crate_version: String,
    pub unix_time: u64,
}

pub fn sha256_hex(data: &[u8]) -> String {
    Sha256::digest(data).iter().map(|b| format!("{b:02x}")).collect()
}

/// `git rev-parse HEAD` of the working directory, or `"unknown"`.
pub fn commit_id() -> String {
    Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

impl Manifest {
    pub fn new(command: &str, config: &str, seeds: Vec<u64>) -> Self {
        Self {
            command: command.to_string(),
            args: std::env::args().collect(),
            config_sha256: sha256_hex(config.as_bytes()),
            config: config.to_string(),
            seeds,
            commit: commit_id(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            unix_time: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn written_manifest_parses() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest::new("eval", "seed = 1\n", vec![1, 2]);
        m.write(dir.path()).unwrap();
        let back: Manifest =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.config_sha256, sha256_hex(b"seed = 1\n"));
    }
}
