//! Run manifests: a small JSON record dropped next to every output tree so a
//! result directory is self-describing. The `config_hash` field is a pure
//! function of the configuration, nothing else; reruns of the same config
//! produce the same hash while any config edit changes it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    /// Which subcommand wrote this tree ("train", "evaluate", "sweep").
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    /// Seeds of the per-run generators, derived from the base seed.
    pub per_run_seeds: Vec<u64>,
    /// Output files relative to the manifest's directory.
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: String, per_run_seeds: Vec<u64>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            config_hash,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            per_run_seeds,
            outputs: Vec::new(),
            wall_time_s: 0.0,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Runtime(format!("manifest does not serialize: {e}")))?;
        std::fs::write(&path, json)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Runtime(format!("{} does not parse: {e}", path.display())))?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(CliError::Runtime(format!(
                "{}: schema version {} unsupported (expected {})",
                path.display(),
                manifest.schema_version,
                SCHEMA_VERSION
            )));
        }
        Ok(manifest)
    }

    pub fn exists(dir: &Path) -> bool {
        dir.join(MANIFEST_FILE).is_file()
    }
}
