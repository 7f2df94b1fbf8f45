//! Result manifests and the content-addressed run cache.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultManifest {
    pub toolkit_version: String,
    pub command: String,
    pub config_hash: String,
    /// The canonical key the hash was taken over.
    pub config: serde_json::Value,
    pub files: Vec<FileEntry>,
    pub wall_clock_seconds: f64,
    pub n_paths: u64,
}

/// Canonical cache key: version, command and the parameters that determine the output.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheKey {
    pub command: String,
    pub canonical: serde_json::Value,
    pub hash: String,
}

impl CacheKey {
    pub fn new(command: &str, params: serde_json::Value) -> Result<Self> {
        let canonical = serde_json::json!({
            "toolkit_version": TOOLKIT_VERSION,
            "command": command,
            "params": params,
        });
        let hash = sha256_hex(serde_json::to_string(&canonical)?.as_bytes());
        Ok(Self {
            command: command.to_string(),
            canonical,
            hash,
        })
    }

    pub fn run_dir(&self, out: &Path) -> PathBuf {
        out.join(&self.command).join(&self.hash[..16])
    }
}

/// An output produced in memory and written once the command has finished.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn new(name: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            bytes,
        }
    }

    pub fn json<T: Serialize>(name: impl Into<String>, value: &T) -> Result<Self> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        Ok(Self::new(name, bytes))
    }
}

/// A cached manifest whose files all exist with matching checksums.
pub fn lookup(out: &Path, key: &CacheKey) -> Option<ResultManifest> {
    let dir = key.run_dir(out);
    let text = fs::read(dir.join(MANIFEST_NAME)).ok()?;
    let m: ResultManifest = serde_json::from_slice(&text).ok()?;
    if m.toolkit_version != TOOLKIT_VERSION || m.config_hash != key.hash {
        return None;
    }
    let intact = m
        .files
        .iter()
        .all(|e| fs::read(dir.join(&e.name)).is_ok_and(|b| sha256_hex(&b) == e.sha256));
    intact.then_some(m)
}

/// Write every artifact and a manifest that lists each of them.
pub fn publish(
    out: &Path,
    key: &CacheKey,
    artifacts: &[Artifact],
    wall_clock_seconds: f64,
    n_paths: u64,
) -> Result<ResultManifest> {
    let dir = key.run_dir(out);
    fs::create_dir_all(&dir)?;
    let mut files = Vec::with_capacity(artifacts.len());
    for a in artifacts {
        if a.name == MANIFEST_NAME || a.name.contains(['/', '\\']) {
            return Err(Error::InvalidParameter(format!(
                "bad artifact name '{}'",
                a.name
            )));
        }
        fs::write(dir.join(&a.name), &a.bytes)?;
        files.push(FileEntry {
            name: a.name.clone(),
            sha256: sha256_hex(&a.bytes),
            bytes: a.bytes.len() as u64,
        });
    }
    let m = ResultManifest {
        toolkit_version: TOOLKIT_VERSION.to_string(),
        command: key.command.clone(),
        config_hash: key.hash.clone(),
        config: key.canonical.clone(),
        files,
        wall_clock_seconds,
        n_paths,
    };
    let mut bytes = serde_json::to_vec_pretty(&m)?;
    bytes.push(b'\n');
    fs::write(dir.join(MANIFEST_NAME), bytes)?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_depends_on_params_only() {
        let a = CacheKey::new("survival", serde_json::json!({"n": 1})).unwrap();
        let b = CacheKey::new("survival", serde_json::json!({"n": 1})).unwrap();
        let c = CacheKey::new("survival", serde_json::json!({"n": 2})).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.hash, c.hash);
        assert_ne!(
            a.hash,
            CacheKey::new("classify", serde_json::json!({"n": 1}))
                .unwrap()
                .hash
        );
    }

    #[test]
    fn publish_then_lookup_and_detect_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let key = CacheKey::new("demo", serde_json::json!({"x": 1})).unwrap();
        assert!(lookup(dir.path(), &key).is_none());
        let arts = [Artifact::new("a.csv", b"t,v\n1,2\n".to_vec())];
        let m = publish(dir.path(), &key, &arts, 0.1, 10).unwrap();
        assert_eq!(m.files[0].sha256, sha256_hex(b"t,v\n1,2\n"));
        assert_eq!(lookup(dir.path(), &key), Some(m));
        fs::write(key.run_dir(dir.path()).join("a.csv"), b"tampered").unwrap();
        assert!(lookup(dir.path(), &key).is_none());
    }

    #[test]
    fn version_is_part_of_the_key() {
        let key = CacheKey::new("demo", serde_json::json!({})).unwrap();
        assert_eq!(key.canonical["toolkit_version"], TOOLKIT_VERSION);
    }
}
