//! Run manifests written beside command outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::write_string;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    /// SHA-256 of each input file, keyed by path as given.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub wall_clock_seconds: f64,
    /// Nondeterministic measurements kept out of the reports.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub timing: BTreeMap<String, f64>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: Vec<String>, config: serde_json::Value, seed: Option<u64>) -> Self {
        RunManifest {
            command,
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            wall_clock_seconds: 0.0,
            timing: BTreeMap::new(),
        }
    }

    /// Hashes a file, or each file directly inside a directory.
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        if path.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
                .map_err(|e| Error::io(path, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            entries.sort();
            for p in entries {
                self.inputs.insert(p.display().to_string(), sha256_file(&p)?);
            }
        } else {
            self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        }
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Manifest location for an output: `<dir>/manifest.json` for directories,
    /// `<file>.manifest.json` otherwise.
    pub fn path_for(out: &Path, is_dir: bool) -> PathBuf {
        if is_dir {
            out.join("manifest.json")
        } else {
            let mut name = out.file_name().unwrap_or_default().to_os_string();
            name.push(".manifest.json");
            out.with_file_name(name)
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_string(
            path,
            &(serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_paths() {
        assert_eq!(
            RunManifest::path_for(Path::new("out/c.jsonl"), false),
            Path::new("out/c.jsonl.manifest.json")
        );
        assert_eq!(
            RunManifest::path_for(Path::new("ckpt"), true),
            Path::new("ckpt/manifest.json")
        );
    }

    #[test]
    fn digest_of_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        std::fs::write(&p, "abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
