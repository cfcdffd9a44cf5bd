//! Run manifests: what was run, on which inputs, with which seed, and what it
//! wrote. Every command writes `<out>.manifest.json` next to its primary
//! output; JSON outputs carry a `manifest` field naming that file, CSV outputs
//! are tied to it by name and listed in its `outputs`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Failure;

#[derive(Clone, Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

impl FileDigest {
    fn of(path: &Path, bytes: &[u8]) -> Self {
        Self { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(bytes)), bytes: bytes.len() }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Timings {
    pub started_unix_ms: u128,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Machine {
    pub os: &'static str,
    pub arch: &'static str,
    pub available_parallelism: usize,
    pub worker_threads: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: &'static str,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Command-specific results worth keeping next to the digests.
    pub summary: serde_json::Value,
    pub machine: Machine,
    pub timings: Timings,
}

#[derive(Serialize)]
struct Stamped<'a, T> {
    manifest: String,
    #[serde(flatten)]
    body: &'a T,
}

/// `<out>.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Collects inputs and outputs of one command invocation.
pub struct Run {
    command: &'static str,
    seed: u64,
    config: serde_json::Value,
    manifest: PathBuf,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    summary: serde_json::Value,
    started: SystemTime,
    clock: Instant,
}

impl Run {
    pub fn new(command: &'static str, seed: u64, config: &impl Serialize, out: &Path) -> Result<Self, Failure> {
        Ok(Self {
            command,
            seed,
            config: serde_json::to_value(config).map_err(Failure::internal)?,
            manifest: manifest_path(out),
            inputs: Vec::new(),
            outputs: Vec::new(),
            summary: serde_json::Value::Null,
            started: SystemTime::now(),
            clock: Instant::now(),
        })
    }

    /// Reads an input file and records its digest.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>, Failure> {
        let bytes = fs::read(path).map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.push(FileDigest::of(path, &bytes));
        Ok(bytes)
    }

    /// Replaces the config snapshot once it is fully known.
    pub fn set_config(&mut self, config: serde_json::Value) {
        self.config = config;
    }

    pub fn set_summary(&mut self, summary: &impl Serialize) -> Result<(), Failure> {
        self.summary = serde_json::to_value(summary).map_err(Failure::internal)?;
        Ok(())
    }

    fn write_bytes(&mut self, path: &Path, bytes: &[u8]) -> Result<(), Failure> {
        fs::write(path, bytes).map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))?;
        self.outputs.push(FileDigest::of(path, bytes));
        Ok(())
    }

    /// Pretty JSON with a leading `manifest` field; `body` must serialize as a map.
    pub fn write_json<T: Serialize>(&mut self, path: &Path, body: &T) -> Result<(), Failure> {
        let name = self.manifest.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let mut text = serde_json::to_string_pretty(&Stamped { manifest: name, body }).map_err(Failure::internal)?;
        text.push('\n');
        self.write_bytes(path, text.as_bytes())
    }

    pub fn write_csv<T: Serialize>(&mut self, path: &Path, rows: &[T]) -> Result<(), Failure> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in rows {
            w.serialize(row).map_err(Failure::internal)?;
        }
        let bytes = w.into_inner().map_err(Failure::internal)?;
        self.write_bytes(path, &bytes)
    }

    /// Writes the manifest and returns its path.
    pub fn finish(self) -> Result<PathBuf, Failure> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            summary: self.summary,
            machine: Machine {
                os: std::env::consts::OS,
                arch: std::env::consts::ARCH,
                available_parallelism: std::thread::available_parallelism().map_or(1, |n| n.get()),
                worker_threads: rayon::current_num_threads(),
            },
            timings: Timings {
                started_unix_ms: self.started.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis()),
                wall_seconds: self.clock.elapsed().as_secs_f64(),
            },
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(Failure::internal)?;
        text.push('\n');
        fs::write(&self.manifest, text)
            .map_err(|e| Failure::input(format!("cannot write {}: {e}", self.manifest.display())))?;
        Ok(self.manifest)
    }
}
