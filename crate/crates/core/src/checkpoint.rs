//! Checkpoint serialization.
//!
//! A checkpoint is the full model bundle plus the training configuration that
//! produced it, as one JSON document. Serialization is deterministic: struct
//! fields emit in declaration order and floats round-trip exactly, so equal
//! checkpoints produce byte-identical JSON.

use alloc::format;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::ModelBundle;
use crate::train::TrainConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub bundle: ModelBundle,
    pub train: TrainConfig,
}

impl Checkpoint {
    pub fn new(bundle: ModelBundle, train: TrainConfig) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            bundle,
            train,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| CoreError::Data {
            detail: format!("checkpoint serialization failed: {e}"),
        })
    }

    pub fn from_json(text: &str) -> Result<Checkpoint> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| CoreError::Data {
            detail: format!("checkpoint parse failed: {e}"),
        })?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(CoreError::Data {
                detail: format!(
                    "unsupported checkpoint format version {} (expected {})",
                    ck.format_version, CHECKPOINT_VERSION
                ),
            });
        }
        ck.bundle.check_consistency()?;
        Ok(ck)
    }

    /// Stable content id: FNV-1a over the serialized form. Equal checkpoints
    /// share an id across runs and machines.
    pub fn id(&self) -> Result<String> {
        let json = self.to_json()?;
        let mut hash: u64 = 0xcbf29ce484222325;
        for b in json.as_bytes() {
            hash ^= u64::from(*b);
            hash = hash.wrapping_mul(0x100000001b3);
        }
        Ok(format!("ck-{hash:016x}"))
    }
}
