use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Record of one command run, written as `manifest.json` at the root of the
/// output directory.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: &'static str,
    /// SHA-256 of the compact JSON encoding of `config`.
    pub config_hash: String,
    pub config: serde_json::Value,
    pub master_seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub artifacts: Vec<PathBuf>,
    #[serde(skip_serializing_if = "serde_json::Map::is_empty")]
    pub extra: serde_json::Map<String, serde_json::Value>,
    pub wall_time_seconds: f64,
}

pub fn config_hash(config: &serde_json::Value) -> String {
    // serde_json::Value keeps object keys sorted, so the encoding is canonical
    let bytes = serde_json::to_vec(config).expect("JSON values always encode");
    hex::encode(Sha256::digest(&bytes))
}

pub struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    master_seed: Option<u64>,
    inputs: Vec<PathBuf>,
    artifacts: Vec<PathBuf>,
    extra: serde_json::Map<String, serde_json::Value>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: &impl Serialize, master_seed: Option<u64>) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            config: serde_json::to_value(config).expect("configs serialize"),
            master_seed,
            inputs: Vec::new(),
            artifacts: Vec::new(),
            extra: serde_json::Map::new(),
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn artifact(&mut self, path: &Path) {
        self.artifacts.push(path.to_path_buf());
    }

    pub fn extra(&mut self, key: &str, value: impl Serialize) {
        self.extra.insert(
            key.to_string(),
            serde_json::to_value(value).expect("values serialize"),
        );
    }

    /// Write `manifest.json` into `out` and return its path.
    pub fn write(self, out: &Path) -> std::io::Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            config_hash: config_hash(&self.config),
            config: self.config,
            master_seed: self.master_seed,
            inputs: self.inputs,
            artifacts: self.artifacts,
            extra: self.extra,
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = out.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text + "\n")?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_construction_order() {
        let a = serde_json::json!({"b": 1, "a": [1.5, 2]});
        let b = serde_json::json!({"a": [1.5, 2], "b": 1});
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
        assert_ne!(config_hash(&a), config_hash(&serde_json::json!({"b": 2})));
    }
}
