//! Per-run manifest: command, crate version, seed and config hash, so any
//! output directory is attributable to an exact configuration.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub stats: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config_sha256: String) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_sha256,
            outputs: Vec::new(),
            stats: serde_json::Value::Null,
        }
    }

    /// Records an output path relative to the run directory, keeping
    /// manifests byte-identical across reruns in different locations.
    pub fn record(&mut self, out_dir: &Path, path: &Path) {
        let shown = path.strip_prefix(out_dir).unwrap_or(path);
        self.outputs.push(shown.display().to_string());
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf, CliError> {
        let path = out_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Config(format!("manifest serialization: {e}")))?;
        std::fs::write(&path, text + "\n")
            .map_err(|e| CliError::Config(format!("writing {}: {e}", path.display())))?;
        Ok(path)
    }
}
