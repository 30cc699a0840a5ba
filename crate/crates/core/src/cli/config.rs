//! Optional TOML defaults. Every key mirrors a command-line flag:
//!
//! ```toml
//! jobs = 4
//! [stft]  window = 512  hop = 256
//! [model] arch = "unet"  channels = 16  embed_dim = 16
//! [mix]   seed = 7  pairs = "exhaustive"  snr_min = -5.0  snr_max = 5.0
//! [train] epochs = 100  lr = 0.001  optimizer = "adam"
//! [vlm]   endpoint_url = "..."  model_name = "..."
//! [llm]   model_name = "..."
//! ```

use std::path::Path;

use serde::Deserialize;

use crate::Error;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub jobs: Option<usize>,
    pub embed_seed: Option<u64>,
    pub stft: StftSection,
    pub model: ModelSection,
    pub mix: MixSection,
    pub train: TrainSection,
    pub vlm: ProviderSection,
    pub llm: ProviderSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftSection {
    pub window: Option<usize>,
    pub hop: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub arch: Option<String>,
    pub channels: Option<usize>,
    pub embed_dim: Option<usize>,
    pub base_channels: Option<usize>,
    pub log_freq_bins: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixSection {
    pub seed: Option<u64>,
    pub pairs: Option<String>,
    pub count: Option<usize>,
    pub snr_db: Option<f64>,
    pub snr_min: Option<f64>,
    pub snr_max: Option<f64>,
    pub rate: Option<u32>,
    pub duration: Option<f64>,
    pub val_fraction: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub init_seed: Option<u64>,
    pub optimizer: Option<String>,
    pub weight_floor: Option<f64>,
    pub split: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSection {
    pub endpoint_url: Option<String>,
    pub model_name: Option<String>,
    pub api_key_env_var: Option<String>,
    pub timeout_s: Option<f64>,
    pub max_retries: Option<u32>,
    pub prompt_template_id: Option<String>,
    pub retry_backoff_ms: Option<u64>,
    pub template_dir: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("--config {}", path.display()), e))?;
        toml::from_str(&text).map_err(|e| Error::Usage(format!("--config {}: {e}", path.display())))
    }
}

/// Parses a config-file string into a flag enum value.
pub fn parse_enum<T: clap::ValueEnum>(key: &str, value: Option<&String>) -> Result<Option<T>, Error> {
    value
        .map(|v| T::from_str(v, true).map_err(|_| Error::Usage(format!("config key {key}: invalid value {v:?}"))))
        .transpose()
}
