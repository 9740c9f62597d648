//! Output directory handling: atomic file writes and the per-run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::CliError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Writes `bytes` to `path` through a sibling temp file and a rename, so a
/// crash never leaves a half-written output behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io)
}

#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub command: &'a str,
    pub args: Vec<String>,
    pub seed: u64,
    pub jobs: usize,
    pub tool_version: &'static str,
    /// Snapshot of the effective configuration, one `key = value` per line.
    pub config: Vec<String>,
    /// Paths relative to the output directory.
    pub outputs: Vec<String>,
    pub wall_clock_ms: f64,
}

/// Collects outputs of one command and writes them plus the manifest.
pub struct Run {
    pub out_dir: PathBuf,
    outputs: Vec<String>,
    started: Instant,
}

impl Run {
    pub fn new(out_dir: &Path) -> Run {
        Run {
            out_dir: out_dir.to_path_buf(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    /// Writes `name` under the output directory and records it.
    pub fn emit(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.out_dir.join(name);
        write_atomic(&path, bytes)?;
        self.outputs.push(name.to_string());
        Ok(path)
    }

    pub fn emit_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        self.emit(name, text.as_bytes())
    }

    /// Writes `<command>.config` and `<command>.manifest.json`.
    pub fn finish(
        mut self,
        command: &str,
        args: Vec<String>,
        seed: u64,
        jobs: usize,
        config_text: &str,
    ) -> Result<PathBuf, CliError> {
        self.emit(&format!("{command}.config"), config_text.as_bytes())?;
        let manifest = RunManifest {
            command,
            args,
            seed,
            jobs,
            tool_version: TOOL_VERSION,
            config: config_text.lines().map(str::to_string).collect(),
            outputs: self.outputs.clone(),
            wall_clock_ms: self.started.elapsed().as_secs_f64() * 1e3,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        let path = self.out_dir.join(format!("{command}.manifest.json"));
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}
