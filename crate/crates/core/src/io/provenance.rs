use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::config::ExperimentConfig;
use crate::io::fs::atomic_write;

/// What produced an output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub crate_version: String,
    pub created_unix: u64,
}

impl Provenance {
    pub fn new(command: impl Into<String>, config: &ExperimentConfig) -> Self {
        Self {
            command: command.into(),
            config_sha256: config.hash(),
            seed: config.run.seed,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    /// Writes `provenance.json` and the resolved `config.txt` into `dir`.
    pub fn write(&self, dir: &Path, config: &ExperimentConfig) -> Result<()> {
        atomic_write(&dir.join("provenance.json"), &serde_json::to_vec_pretty(self)?)?;
        atomic_write(&dir.join("config.txt"), config.to_text().as_bytes())
    }
}
