use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use fovea_core::diffusion::file_sha256;
use fovea_core::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileEntry {
    pub fn of(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self {
            path: path.as_ref().to_path_buf(),
            sha256: file_sha256(path)?,
        })
    }
}

/// What a run consumed and produced; enough to re-run it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: Value,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    pub started_unix_s: u64,
    pub elapsed_s: f64,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: Value) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            elapsed_s: 0.0,
            notes: Vec::new(),
        }
    }

    pub fn input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.inputs.push(FileEntry::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.outputs.push(FileEntry::of(path)?);
        Ok(())
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let path = dir.as_ref().join(format!("manifest-{}.json", self.command));
        std::fs::write(&path, serde_json::to_vec_pretty(self)?)?;
        Ok(path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}
