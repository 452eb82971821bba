use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Result;
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: BTreeMap<String, serde_json::Value>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Items that failed while the run continued.
    pub failures: Vec<String>,
    pub started_unix_s: f64,
    pub duration_s: f64,
}

/// Collects paths while a command runs.
pub struct Run {
    command: &'static str,
    seed: u64,
    started_wall: SystemTime,
    started: Instant,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub failures: Vec<String>,
}

impl Run {
    pub fn new(command: &'static str, seed: u64) -> Self {
        Self {
            command,
            seed,
            started_wall: SystemTime::now(),
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            failures: Vec::new(),
        }
    }

    pub fn input(&mut self, p: impl Into<PathBuf>) {
        self.inputs.push(p.into());
    }

    /// Writes `bytes` atomically and records the path as an output.
    pub fn write(&mut self, path: PathBuf, bytes: &[u8]) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        skywatch::write_atomic(&path, bytes)?;
        self.outputs.push(path);
        Ok(())
    }

    pub fn fail(&mut self, item: impl std::fmt::Display, err: impl std::fmt::Display) {
        eprintln!("error: {item}: {err}");
        self.failures.push(format!("{item}: {err}"));
    }

    pub fn finish(self, out: &Path, config: BTreeMap<String, serde_json::Value>) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config,
            inputs: self.inputs,
            outputs: self.outputs,
            failures: self.failures,
            started_unix_s: self
                .started_wall
                .duration_since(UNIX_EPOCH)
                .map_or(0.0, |d| d.as_secs_f64()),
            duration_s: self.started.elapsed().as_secs_f64(),
        };
        std::fs::create_dir_all(out)?;
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        skywatch::write_atomic(&out.join(MANIFEST_FILE), text.as_bytes())?;
        Ok(manifest)
    }
}
