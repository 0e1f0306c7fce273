//! Run manifests: written as `incomplete` before any result, rewritten with
//! output digests once the command finishes.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::output::CliResult;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Incomplete,
    Complete,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputDigest {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    /// Fully resolved configuration: scenario, options and defaults.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub artifact_version: String,
    pub bundle_version: u32,
    /// `--jobs` as given (0 = all cores) and the worker count in effect.
    pub jobs_requested: usize,
    pub threads: usize,
    pub status: Status,
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    pub exit_code: Option<u8>,
    pub error: Option<String>,
    pub outputs: Vec<OutputDigest>,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// An output directory with its manifest.
pub struct Run {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    pub fn begin(dir: &Path, command: &str, config: serde_json::Value, seed: Option<u64>, jobs: usize) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
        let run = Run {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                command: command.to_string(),
                argv: std::env::args().collect(),
                config,
                seed,
                artifact_version: env!("CARGO_PKG_VERSION").to_string(),
                bundle_version: mfg_reflect::bundle::BUNDLE_VERSION,
                jobs_requested: jobs,
                threads: rayon::current_num_threads(),
                status: Status::Incomplete,
                started_unix: now(),
                finished_unix: None,
                exit_code: None,
                error: None,
                outputs: Vec::new(),
            },
        };
        run.store()?;
        Ok(run)
    }

    fn store(&self) -> CliResult<()> {
        let text = serde_json::to_string_pretty(&self.manifest)?;
        let path = self.dir.join(MANIFEST_FILE);
        std::fs::write(&path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        Ok(())
    }

    /// Writes `bytes` to `name` inside the run directory and records its digest.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        self.manifest.outputs.retain(|o| o.file != name);
        self.manifest.outputs.push(OutputDigest {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    fn close(mut self, status: Status, code: Option<u8>, error: Option<String>) -> CliResult<()> {
        self.manifest.status = status;
        self.manifest.exit_code = code;
        self.manifest.error = error;
        self.manifest.finished_unix = Some(now());
        self.store()
    }
}

/// Opens a run in `dir`, executes `body` and closes the manifest with the
/// outcome.
pub fn execute(
    dir: &Path,
    command: &str,
    config: serde_json::Value,
    seed: Option<u64>,
    jobs: usize,
    body: impl FnOnce(&mut Run) -> CliResult<u8>,
) -> CliResult<u8> {
    let mut run = Run::begin(dir, command, config, seed, jobs)?;
    match body(&mut run) {
        Ok(code) => {
            run.close(Status::Complete, Some(code), None)?;
            Ok(code)
        }
        Err(e) => {
            let msg = e.to_string();
            // The command error is the one worth reporting.
            let _ = run.close(Status::Failed, Some(1), Some(msg));
            Err(e)
        }
    }
}
