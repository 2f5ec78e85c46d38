use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AmlNet, BnRunning};
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::nn::ModelConfig;
use crate::params::ParamEntry;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Everything needed to rebuild a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model_config: ModelConfig,
    /// Per-series target normalization, indexed by series id.
    pub norm_stats: Vec<NormStats>,
    pub params: Vec<ParamEntry>,
    pub bn_running_p1: Vec<BnRunning>,
    pub bn_running_p2: Vec<BnRunning>,
}

impl Checkpoint {
    pub fn capture(model: &AmlNet, norm_stats: &[NormStats]) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            model_config: model.config.clone(),
            norm_stats: norm_stats.to_vec(),
            params: model.params.entries().to_vec(),
            bn_running_p1: model.discriminators.running_p1.clone(),
            bn_running_p2: model.discriminators.running_p2.clone(),
        }
    }

    /// Rebuilds the model; every parameter must match by name and shape.
    pub fn restore(&self) -> Result<AmlNet> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} is not supported (expected {CHECKPOINT_FORMAT_VERSION})",
                self.format_version
            )));
        }
        let mut model = AmlNet::new(self.model_config.clone(), 0)?;
        if model.params.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, the configured model has {}",
                self.params.len(),
                model.params.len()
            )));
        }
        let ids: Vec<_> = model.params.ids().collect();
        for (id, entry) in ids.into_iter().zip(&self.params) {
            if model.params.name(id) != entry.name
                || model.params.group(id) != entry.group
                || model.params.get(id).shape() != entry.value.shape()
            {
                return Err(Error::Checkpoint(format!(
                    "tensor {:?} {:?} does not match the configured {:?} {:?}",
                    entry.name,
                    entry.value.shape(),
                    model.params.name(id),
                    model.params.get(id).shape()
                )));
            }
            *model.params.get_mut(id) = entry.value.clone();
        }
        let depth = model.config.n_d;
        if self.bn_running_p1.len() != depth || self.bn_running_p2.len() != depth {
            return Err(Error::Checkpoint("batch-norm statistics do not match n_d".into()));
        }
        model.discriminators.running_p1 = self.bn_running_p1.clone();
        model.discriminators.running_p2 = self.bn_running_p2.clone();
        Ok(model)
    }

    /// Writes JSON to a temporary sibling, then renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self)
            .map_err(|e| Error::Checkpoint(format!("cannot serialize checkpoint: {e}")))?;
        write_atomic(path, &json)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    /// Loads and rejects a checkpoint whose architecture differs from
    /// `expected`.
    pub fn load_matching(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if &ckpt.model_config != expected {
            return Err(Error::Checkpoint(format!(
                "{} was trained with a different model configuration:\n  checkpoint: {:?}\n  requested:  {:?}",
                path.display(),
                ckpt.model_config,
                expected
            )));
        }
        Ok(ckpt)
    }
}

/// Replaces `path` with `bytes` so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Checkpoint(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
