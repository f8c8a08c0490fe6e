//! Versioned JSON checkpoints and resumable trainer state.

use std::fs;
use std::io;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thinkguard_core::policy::ToyPolicy;
use thinkguard_core::trainer::sft::SftVariant;

pub const CHECKPOINT_FORMAT: &str = "thinkguard-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {err}")]
    Io { path: String, err: io::Error },
    #[error("{path}: {err}")]
    Parse { path: String, err: serde_json::Error },
    #[error("{path}: not a checkpoint (format `{found}`)")]
    WrongFormat { path: String, found: String },
    #[error("{path}: unsupported checkpoint version {found}")]
    UnsupportedVersion { path: String, found: u32 },
}

/// Training stage that produced a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Init,
    Sft,
    Grpo,
}

/// Vocabulary, feature layout and parameters of a policy, plus the output
/// variant it decodes with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub stage: Stage,
    pub variant: SftVariant,
    pub policy: ToyPolicy,
}

impl Checkpoint {
    pub fn new(stage: Stage, variant: SftVariant, policy: ToyPolicy) -> Self {
        Self { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, stage, variant, policy }
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        save_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let ckpt: Checkpoint = load_json(path)?;
        let p = path.display().to_string();
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(CheckpointError::WrongFormat { path: p, found: ckpt.format });
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::UnsupportedVersion { path: p, found: ckpt.version });
        }
        Ok(ckpt)
    }
}

/// Writes `value` as pretty JSON through a temporary file, so an
/// interrupted write never leaves a truncated file behind.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CheckpointError> {
    let io_err = |err| CheckpointError::Io { path: path.display().to_string(), err };
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|err| CheckpointError::Parse { path: path.display().to_string(), err })?;
    text.push('\n');
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, CheckpointError> {
    let p = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|err| CheckpointError::Io { path: p.clone(), err })?;
    serde_json::from_str(&text).map_err(|err| CheckpointError::Parse { path: p, err })
}
