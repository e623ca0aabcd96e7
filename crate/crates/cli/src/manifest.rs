//! Per-run manifest: what ran, with which settings, and what it produced.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;
use crate::exit::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Complete,
    /// Some outputs were written before a failure; see `note`.
    Partial,
    Failed,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub started_unix_s: u64,
    pub elapsed_s: f64,
    pub threads: usize,
    pub single_thread: bool,
    /// Resolved configuration; `--config <this manifest>` reruns with it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run_config: Option<RunConfig>,
    /// Command inputs outside the config (checkpoint path, start point, …).
    pub inputs: Value,
    pub seeds: Value,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub artifacts: Vec<String>,
}

/// Output directory plus the manifest being assembled for it.
pub struct Run {
    pub dir: PathBuf,
    pub manifest: Manifest,
    /// Defaults to `<command>.manifest.json`.
    pub manifest_name: String,
    started: Instant,
}

impl Run {
    pub fn start(command: &str, dir: &Path, single_thread: bool) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::config(format!("cannot create output dir {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: Manifest {
                tool: env!("CARGO_PKG_NAME"),
                version: env!("CARGO_PKG_VERSION"),
                command: command.to_string(),
                argv: std::env::args().collect(),
                started_unix_s: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
                elapsed_s: 0.0,
                threads: rayon::current_num_threads(),
                single_thread,
                run_config: None,
                inputs: Value::Null,
                seeds: Value::Null,
                status: Status::Failed,
                note: None,
                artifacts: Vec::new(),
            },
            manifest_name: format!("{command}.manifest.json"),
            started: Instant::now(),
        })
    }

    /// Path of an output file, recorded in the manifest.
    pub fn artifact(&mut self, name: &str) -> PathBuf {
        if !self.manifest.artifacts.iter().any(|a| a == name) {
            self.manifest.artifacts.push(name.to_string());
        }
        self.dir.join(name)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let path = self.artifact(name);
        std::fs::write(&path, serde_json::to_string_pretty(value)?)?;
        Ok(path)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dir.join(&self.manifest_name)
    }

    /// Writes the manifest with the final status.
    pub fn finish(mut self, status: Status, note: Option<String>) -> Result<PathBuf, CliError> {
        self.manifest.status = status;
        self.manifest.note = note;
        self.manifest.elapsed_s = self.started.elapsed().as_secs_f64();
        let path = self.manifest_path();
        std::fs::write(&path, serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(path)
    }
}
