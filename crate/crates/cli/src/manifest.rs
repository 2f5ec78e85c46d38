use std::path::{Path, PathBuf};

use amlnet::config::RunConfig;
use amlnet::model::write_atomic;
use amlnet::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

/// First file of every run directory. Together with the input checkpoint
/// it pins everything the command's outputs depend on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// SHA-256 over the tool version and the resolved configuration.
    pub content_hash: String,
    pub seed: u64,
    pub config: RunConfig,
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_sha256: Option<String>,
    pub decoders: Vec<String>,
    /// Files the command writes, relative to the run directory.
    pub artifacts: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig, artifacts: Vec<String>) -> Self {
        let version = env!("CARGO_PKG_VERSION");
        let text = format!("{version}\n{}", config.to_toml());
        RunManifest {
            command: command.into(),
            tool_version: version.into(),
            content_hash: sha256_hex(text.as_bytes()),
            seed: config.seed,
            config: config.clone(),
            checkpoint: None,
            checkpoint_sha256: None,
            decoders: Vec::new(),
            artifacts,
        }
    }

    pub fn with_checkpoint(mut self, path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.checkpoint_sha256 = Some(sha256_hex(&bytes));
        self.checkpoint = Some(path.to_path_buf());
        Ok(self)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        write_atomic(&dir.join(MANIFEST_FILE), &json)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}
