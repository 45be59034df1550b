//! Run manifests: what a command produced and from which configuration.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub command: String,
    pub config_hash: String,
    pub config: String,
    pub seeds: Vec<u64>,
    pub checkpoints: Vec<String>,
    pub metrics: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: String, config: String, seeds: Vec<u64>) -> Self {
        Self {
            format_version: MANIFEST_VERSION,
            command: command.to_string(),
            config_hash,
            config,
            seeds,
            checkpoints: Vec::new(),
            metrics: Vec::new(),
            started_unix: 0,
            finished_unix: 0,
        }
    }

    /// Stamps real wall-clock times; deterministic runs leave zeros.
    pub fn stamp(&mut self, started: SystemTime, deterministic: bool) {
        if deterministic {
            return;
        }
        let secs =
            |t: SystemTime| t.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        self.started_unix = secs(started);
        self.finished_unix = secs(SystemTime::now());
    }

    /// Writes `manifest.json`; every referenced file must already exist.
    pub fn write(&self, out_dir: &Path) -> std::io::Result<()> {
        debug_assert!(self
            .checkpoints
            .iter()
            .chain(&self.metrics)
            .all(|p| Path::new(p).exists()));
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(out_dir.join("manifest.json"), text + "\n")
    }
}
