//! Run records: what was run, on which inputs, and what it produced.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename, so
/// readers never observe a partial file.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub status: String,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub config_digest: Option<String>,
    pub inputs: BTreeMap<String, String>,
    pub options: BTreeMap<String, serde_json::Value>,
    pub stage_timings_ms: BTreeMap<String, f64>,
    pub summary: BTreeMap<String, serde_json::Value>,
    pub warnings: Vec<String>,
    pub outputs: BTreeMap<String, String>,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn new(command: impl Into<String>) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.into(),
            status: "running".into(),
            ..RunManifest::default()
        }
    }

    pub fn option(&mut self, key: &str, value: impl Serialize) {
        self.options.insert(
            key.to_string(),
            serde_json::to_value(value).expect("option serializes"),
        );
    }

    pub fn summarize(&mut self, key: &str, value: impl Serialize) {
        self.summary.insert(
            key.to_string(),
            serde_json::to_value(value).expect("summary serializes"),
        );
    }

    pub fn record_input(&mut self, label: &str, path: &Path) -> Result<()> {
        self.inputs.insert(label.to_string(), file_digest(path)?);
        Ok(())
    }

    /// Writes an output file atomically and records its digest under `name`.
    pub fn write_output(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(dir.join(name), bytes)?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_sha256() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn atomic_write_and_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("test");
        m.write_output(dir.path(), "a.csv", b"x\n").unwrap();
        assert_eq!(std::fs::read(dir.path().join("a.csv")).unwrap(), b"x\n");
        assert_eq!(m.outputs["a.csv"], sha256_hex(b"x\n"));
        m.write(dir.path().join("manifest.json")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["command"], "test");
        assert!(!dir.path().join("manifest.json.tmp").exists());
    }
}
