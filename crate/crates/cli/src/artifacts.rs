//! In-memory artifact staging and the run manifest.
//!
//! Subcommands stage every output here and only touch the disk once all
//! computation succeeded, so a failed run leaves no partial files behind.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn add_text(&mut self, name: impl Into<String>, text: String) {
        self.add(name, text.into_bytes());
    }

    pub fn add_json<T: Serialize>(&mut self, name: impl Into<String>, value: &T) {
        let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
        text.push('\n');
        self.add_text(name, text);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    pub wall_time_seconds: f64,
    #[serde(default)]
    pub inputs: Vec<FileRecord>,
    pub artifacts: Vec<FileRecord>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST_NAME);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Io(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Integrity(format!("manifest {}: {e}", path.display())))
    }

    /// Re-hashes every artifact; returns the first mismatch as an error.
    pub fn verify(&self, dir: &Path) -> Result<(), CliError> {
        for record in &self.artifacts {
            let path = dir.join(&record.path);
            let bytes = std::fs::read(&path)
                .map_err(|e| CliError::Integrity(format!("artifact {} unreadable: {e}", record.path)))?;
            let digest = sha256_hex(&bytes);
            if digest != record.sha256 {
                return Err(CliError::Integrity(format!(
                    "checksum mismatch for {}: manifest {}, file {digest}",
                    record.path, record.sha256
                )));
            }
        }
        Ok(())
    }

    pub fn artifact(&self, name: &str) -> Option<&FileRecord> {
        self.artifacts.iter().find(|r| r.path == name)
    }
}

pub struct RunInfo<'a> {
    pub subcommand: &'a str,
    pub config_json: &'a str,
    pub seed: u64,
    pub threads: usize,
    pub wall_time_seconds: f64,
    pub inputs: Vec<(PathBuf, Vec<u8>)>,
}

/// Writes all staged artifacts, then the manifest.
pub fn commit(out_dir: &Path, artifacts: Artifacts, info: RunInfo<'_>) -> Result<Manifest, CliError> {
    let io = |e: std::io::Error, what: &Path| CliError::Io(format!("{}: {e}", what.display()));
    std::fs::create_dir_all(out_dir).map_err(|e| io(e, out_dir))?;
    let mut records = Vec::with_capacity(artifacts.files.len());
    for (name, bytes) in &artifacts.files {
        let path = out_dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| io(e, parent))?;
        }
        std::fs::write(&path, bytes).map_err(|e| io(e, &path))?;
        records.push(FileRecord {
            path: name.clone(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
    }
    let manifest = Manifest {
        tool: "paslab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: info.subcommand.into(),
        config_hash: sha256_hex(info.config_json.as_bytes()),
        seed: info.seed,
        threads: info.threads,
        wall_time_seconds: info.wall_time_seconds,
        inputs: info
            .inputs
            .iter()
            .map(|(p, b)| FileRecord {
                path: p.display().to_string(),
                sha256: sha256_hex(b),
                bytes: b.len() as u64,
            })
            .collect(),
        artifacts: records,
    };
    let path = out_dir.join(MANIFEST_NAME);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| io(e, &path))?;
    Ok(manifest)
}
