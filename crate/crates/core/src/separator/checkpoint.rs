//! JSON checkpoint container.
//!
//! ```json
//! {
//!   "format": "qsep-checkpoint",
//!   "version": 1,
//!   "model": { "arch": "unet", "channels": 16, "embed_dim": 16,
//!              "base_channels": 8, "log_freq_bins": null },
//!   "stft": { "window_size": 512, "hop_size": 256, "window": "hann",
//!             "log_epsilon": 1e-10 },
//!   "sample_rate": 16000,
//!   "tensors": [ { "name": "unet.enc1.weight", "shape": [8, 1, 3, 3],
//!                  "data": [ ... ] }, ... ]
//! }
//! ```
//!
//! Tensors appear in [`ModelParams::tensors`] order; data is row-major. Floats
//! are written with shortest round-trip formatting so a save/load cycle is
//! bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams, SeparatorError};
use crate::dsp::StftConfig;

pub const CHECKPOINT_FORMAT: &str = "qsep-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub stft: StftConfig,
    pub sample_rate: u32,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    model: ModelConfig,
    stft: StftConfig,
    sample_rate: u32,
    tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String, SeparatorError> {
        let shapes = self.params.tensor_shapes();
        let tensors = self
            .params
            .tensors()
            .into_iter()
            .zip(shapes)
            .map(|((name, data), shape)| TensorRecord {
                name,
                shape,
                data: data.to_vec(),
            })
            .collect();
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model: self.params.config,
            stft: self.stft,
            sample_rate: self.sample_rate,
            tensors,
        };
        serde_json::to_string(&file).map_err(|e| SeparatorError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, SeparatorError> {
        let file: CheckpointFile = serde_json::from_str(text).map_err(|e| SeparatorError::Checkpoint(e.to_string()))?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(SeparatorError::Checkpoint(format!(
                "unexpected format tag {:?}",
                file.format
            )));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(SeparatorError::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                file.version
            )));
        }
        file.stft.validate()?;
        let mut params = ModelParams::zeros(file.model);
        let shapes = params.tensor_shapes();
        let slots = params.tensors_mut();
        if slots.len() != file.tensors.len() {
            return Err(SeparatorError::Checkpoint(format!(
                "expected {} tensors, found {}",
                slots.len(),
                file.tensors.len()
            )));
        }
        for (((name, slot), shape), record) in slots.into_iter().zip(shapes).zip(&file.tensors) {
            if record.name != name || record.shape != shape || record.data.len() != slot.len() {
                return Err(SeparatorError::Checkpoint(format!(
                    "tensor {:?} {:?} does not match expected {name:?} {shape:?}",
                    record.name, record.shape
                )));
            }
            if record.data.iter().any(|v| !v.is_finite()) {
                return Err(SeparatorError::Checkpoint(format!("non-finite values in {name}")));
            }
            slot.copy_from_slice(&record.data);
        }
        Ok(Self {
            params,
            stft: file.stft,
            sample_rate: file.sample_rate,
        })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<(), SeparatorError> {
    let path = path.as_ref();
    let text = checkpoint.to_json()?;
    std::fs::write(path, text).map_err(|source| SeparatorError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, SeparatorError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SeparatorError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Checkpoint::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::separator::UnetArch;

    #[test]
    fn round_trip_is_bit_exact() {
        for arch in [UnetArch::Unet, UnetArch::Pointwise] {
            let config = ModelConfig {
                arch,
                log_freq_bins: Some(48),
                ..ModelConfig::default()
            };
            let mut params = ModelParams::init(config, 77);
            params.mask_bias = -0.123456789012345;
            let ckpt = Checkpoint {
                params,
                stft: StftConfig::default(),
                sample_rate: 16_000,
            };
            let back = Checkpoint::from_json(&ckpt.to_json().unwrap()).unwrap();
            assert_eq!(back, ckpt);
        }
    }

    #[test]
    fn rejects_wrong_version_and_shapes() {
        let ckpt = Checkpoint {
            params: ModelParams::init(ModelConfig::default(), 1),
            stft: StftConfig::default(),
            sample_rate: 16_000,
        };
        let json = ckpt.to_json().unwrap();
        let bumped = json.replace("\"version\":1", "\"version\":99");
        assert!(Checkpoint::from_json(&bumped).is_err());
        let mut value: serde_json::Value = serde_json::from_str(&json).unwrap();
        value["model"]["channels"] = 8.into();
        assert!(Checkpoint::from_json(&value.to_string()).is_err());
    }
}
