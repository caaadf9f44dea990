//! Run manifests: one sidecar per command run, referenced by its outputs.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 over the command arguments and the bytes of every input file.
    pub config_hash: String,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub tool_version: String,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub struct Run {
    manifest: RunManifest,
    hasher: Sha256,
}

impl Run {
    pub fn start(command: &str, args: &impl Serialize, seed: Option<u64>) -> Result<Self, CliError> {
        let mut hasher = Sha256::new();
        hasher.update(command.as_bytes());
        hasher.update(serde_json::to_vec(args).map_err(CliError::runtime)?);
        Ok(Run {
            manifest: RunManifest {
                command: command.to_string(),
                config_hash: String::new(),
                seed,
                inputs: Vec::new(),
                outputs: Vec::new(),
                started_unix: now(),
                finished_unix: 0,
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
            },
            hasher,
        })
    }

    pub fn input(&mut self, path: &Path) {
        if let Ok(bytes) = std::fs::read(path) {
            self.hasher.update((bytes.len() as u64).to_le_bytes());
            self.hasher.update(&bytes);
        }
        self.manifest.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.to_path_buf());
    }

    /// Writes the manifest to `path` and returns it.
    pub fn finish(mut self, path: &Path) -> Result<RunManifest, CliError> {
        self.manifest.config_hash = hex::encode(self.hasher.finalize());
        self.manifest.finished_unix = now();
        write_json(path, &self.manifest)?;
        Ok(self.manifest)
    }
}

/// `<file>.manifest.json` next to `artifact`.
pub fn sidecar(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Serializes `value` with a `"manifest"` field naming the sidecar.
pub fn write_artifact(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut v = serde_json::to_value(value).map_err(CliError::runtime)?;
    if let serde_json::Value::Object(map) = &mut v {
        let name = sidecar(path).file_name().map(|n| n.to_string_lossy().into_owned());
        map.insert("manifest".into(), serde_json::Value::from(name));
    }
    write_json(path, &v)
}
