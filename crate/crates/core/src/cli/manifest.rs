//! Run manifests: what was run, with which resolved settings, and what it
//! produced.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Ok,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub exit_code: i32,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Every setting after merging defaults, config file and flags.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    /// Seconds since the Unix epoch. `SOURCE_DATE_EPOCH` pins both stamps.
    pub started_at: u64,
    pub finished_at: Option<u64>,
    pub outputs: Vec<PathBuf>,
    pub status: RunStatus,
    pub error: Option<ErrorRecord>,
}

fn now() -> u64 {
    if let Some(v) = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse().ok())
    {
        return v;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>, threads: Option<usize>) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            seed,
            threads,
            started_at: now(),
            finished_at: None,
            outputs: Vec::new(),
            status: RunStatus::Running,
            error: None,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn finish_ok(&mut self) {
        self.finished_at = Some(now());
        self.status = RunStatus::Ok;
    }

    pub fn finish_err(&mut self, exit_code: i32, message: String) {
        self.finished_at = Some(now());
        self.status = RunStatus::Error;
        self.error = Some(ErrorRecord { exit_code, message });
    }
}
