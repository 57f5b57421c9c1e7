//! Atomic file output and per-run manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

/// Writes through a temporary file in the destination directory and renames
/// it into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let suffix = path
        .extension()
        .map(|e| format!(".{}", e.to_string_lossy()))
        .unwrap_or_default();
    let tmp = tempfile::Builder::new()
        .prefix(".wirepipe-")
        .suffix(&suffix)
        .tempfile_in(dir)
        .with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    write(tmp.path())?;
    tmp.persist(path)
        .with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, |tmp| Ok(fs::write(tmp, bytes)?))
}

pub fn write_json_atomic(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes_atomic(path, text.as_bytes())
}

pub fn version_string() -> String {
    match option_env!("WIREPIPE_GIT_DESCRIBE") {
        Some(v) => v.to_string(),
        None => format!("v{}", env!("CARGO_PKG_VERSION")),
    }
}

/// Record of one invocation: what ran, on what, with which settings.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub threads: usize,
    pub started_unix: f64,
    pub wall_seconds: f64,
    pub stats: Value,
}

pub struct RunClock {
    started_unix: f64,
    start: Instant,
}

impl RunClock {
    pub fn start() -> Self {
        Self {
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or(0.0),
            start: Instant::now(),
        }
    }

    pub fn manifest(&self, command: &str, config: Value, inputs: Vec<PathBuf>, outputs: Vec<PathBuf>) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            version: version_string(),
            config,
            inputs,
            outputs,
            seed: None,
            threads: rayon::current_num_threads(),
            started_unix: self.started_unix,
            wall_seconds: self.start.elapsed().as_secs_f64(),
            stats: Value::Null,
        }
    }
}

/// `out.png` → `out.png.run.json`.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}
