//! Run manifests and output-directory handling.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use styleeq_core::synthglyph::dataset::sha256_hex;

use crate::{CmdResult, Failure};

pub const MANIFEST: &str = "run_manifest.json";

/// Provenance of one command invocation.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_path: Option<String>,
    pub config_sha256: Option<String>,
    /// Hash of each input dataset's manifest, by role.
    pub datasets: BTreeMap<String, String>,
    /// Parent checkpoints (path and hash) the outputs descend from.
    pub checkpoint_lineage: Vec<Lineage>,
    pub seeds: BTreeMap<String, u64>,
    pub threads: usize,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct Lineage {
    pub path: String,
    pub sha256: String,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, threads: usize) -> Self {
        Self {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_path: None,
            config_sha256: None,
            datasets: BTreeMap::new(),
            checkpoint_lineage: Vec::new(),
            seeds: BTreeMap::new(),
            threads,
            started_unix: now(),
            finished_unix: 0,
            outputs: Vec::new(),
        }
    }

    pub fn config(&mut self, path: &Path, bytes: &[u8]) {
        self.config_path = Some(path.display().to_string());
        self.config_sha256 = Some(sha256_hex(bytes));
    }

    pub fn dataset(&mut self, role: &str, dir: &Path) -> CmdResult {
        let p = dir.join(styleeq_core::synthglyph::dataset::MANIFEST_FILE);
        let bytes = fs::read(&p).map_err(|e| styleeq_core::Error::io(&p, e))?;
        self.datasets.insert(role.into(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn parent(&mut self, path: &Path) -> CmdResult {
        let bytes = fs::read(path).map_err(|e| styleeq_core::Error::io(path, e))?;
        self.checkpoint_lineage.push(Lineage { path: path.display().to_string(), sha256: sha256_hex(&bytes) });
        Ok(())
    }
}

/// An output directory held under a lock file for the command's lifetime.
pub struct OutDir {
    pub root: PathBuf,
    lock: PathBuf,
    pub manifest: RunManifest,
}

impl OutDir {
    pub fn open(root: &Path, manifest: RunManifest) -> CmdResult<Self> {
        fs::create_dir_all(root).map_err(|e| styleeq_core::Error::io(root, e))?;
        let lock = root.join(".styleeq.lock");
        fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
            .map_err(|_| Failure::Runtime(format!("{} is in use by another command (remove {} if stale)", root.display(), lock.display())))?;
        Ok(Self { root: root.to_path_buf(), lock, manifest })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> CmdResult {
        let p = self.path(name);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(|e| styleeq_core::Error::io(dir, e))?;
        }
        fs::write(&p, bytes).map_err(|e| styleeq_core::Error::io(&p, e))?;
        self.record(name);
        Ok(())
    }

    /// Notes a file written by someone else.
    pub fn record(&mut self, name: &str) {
        if !self.manifest.outputs.iter().any(|o| o == name) {
            self.manifest.outputs.push(name.into());
        }
    }

    /// Writes the run manifest and releases the lock.
    pub fn finish(mut self) -> CmdResult {
        self.manifest.finished_unix = now();
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes") + "\n";
        let p = self.path(MANIFEST);
        fs::write(&p, text).map_err(|e| styleeq_core::Error::io(&p, e))?;
        Ok(())
    }
}

impl Drop for OutDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

/// Reads a config file; a missing file is a missing-input failure naming it.
pub fn read_config(path: &Path) -> CmdResult<Vec<u8>> {
    fs::read(path).map_err(|e| styleeq_core::Error::io(path, e).into())
}

pub fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path, bytes: &[u8]) -> CmdResult<T> {
    let text = std::str::from_utf8(bytes).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    toml::from_str(text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}
