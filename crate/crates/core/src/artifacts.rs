//! Artifact files and their append-only run manifests.
//!
//! Every artifact `foo.csv` gets a sibling `foo.csv.manifest.jsonl`; each run
//! that writes the artifact appends one [`RunManifest`] line.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Hex SHA-256 of the canonical (sorted-key, compact) JSON form of `config`.
pub fn config_digest(config: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(config).expect("JSON values serialize");
    Sha256::digest(canonical.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub master_seed: u64,
    pub config_digest: String,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    pub fn new(command: &str, master_seed: u64, config: serde_json::Value) -> Self {
        RunManifest {
            tool_version: TOOL_VERSION.to_string(),
            command: command.to_string(),
            master_seed,
            config_digest: config_digest(&config),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix_s: unix_now(),
            finished_unix_s: 0.0,
        }
    }

    /// Recompute the digest over the stored config.
    pub fn verify(&self) -> bool {
        config_digest(&self.config) == self.config_digest
    }
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.jsonl");
    artifact.with_file_name(name)
}

/// Append one manifest line next to `artifact`.
pub fn append_manifest(artifact: &Path, m: &RunManifest) -> Result<()> {
    let path = manifest_path(artifact);
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    writeln!(f, "{}", serde_json::to_string(m)?).map_err(|e| Error::io(&path, e))
}

pub fn read_manifests(artifact: &Path) -> Result<Vec<RunManifest>> {
    let path = manifest_path(artifact);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn digest_is_key_order_independent_and_content_sensitive() {
        let a: serde_json::Value = serde_json::from_str(r#"{"b":1,"a":[1,2]}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"a":[1,2],"b":1}"#).unwrap();
        assert_eq!(config_digest(&a), config_digest(&b));
        assert_ne!(config_digest(&a), config_digest(&json!({"a":[1,2],"b":2})));
        assert_eq!(config_digest(&a).len(), 64);
    }

    #[test]
    fn manifests_append() {
        let dir = tempfile::tempdir().unwrap();
        let art = dir.path().join("x.csv");
        let mut m = RunManifest::new("gen", 7, json!({"k": 1}));
        append_manifest(&art, &m).unwrap();
        m.master_seed = 8;
        append_manifest(&art, &m).unwrap();
        let ms = read_manifests(&art).unwrap();
        assert_eq!(ms.len(), 2);
        assert!(ms.iter().all(RunManifest::verify));
        assert_eq!(manifest_path(&art).file_name().unwrap(), "x.csv.manifest.jsonl");
    }
}
