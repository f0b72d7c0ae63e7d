//! Run manifests: enough to re-execute a run and check its artifacts.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use slime_core::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name, exactly as given.
    pub args: Vec<String>,
    pub working_dir: PathBuf,
    /// Fully resolved settings.
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub artifacts: Vec<Artifact>,
}

pub fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub fn digest_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, config: serde_json::Value, seeds: Vec<u64>, started: u128) -> Self {
        Self {
            tool: "slime".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args,
            working_dir: std::env::current_dir().unwrap_or_default(),
            config,
            seeds,
            started_unix_ms: started,
            finished_unix_ms: 0,
            artifacts: Vec::new(),
        }
    }

    pub fn record(&mut self, path: &Path) -> Result<()> {
        self.artifacts.push(Artifact {
            path: path.to_path_buf(),
            sha256: digest_file(path)?,
        });
        Ok(())
    }

    pub fn write(&mut self, path: &Path) -> Result<()> {
        self.finished_unix_ms = now_ms();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Artifacts whose current contents no longer match the recorded digest.
    pub fn mismatches(&self) -> Vec<PathBuf> {
        self.artifacts
            .iter()
            .filter(|a| {
                let path = if a.path.is_absolute() { a.path.clone() } else { self.working_dir.join(&a.path) };
                digest_file(&path).map(|d| d != a.sha256).unwrap_or(true)
            })
            .map(|a| a.path.clone())
            .collect()
    }
}
