//! Band-energy embedder and prototype classifier.
//!
//! The spectrum is split into `bands` equal-width linear bands. Each frame
//! yields `ln(band power + eps)` per band. A clip embedding concatenates the
//! per-band mean and standard deviation over frames. Class probabilities are
//! `sigmoid(cos(embedding, prototype_k))` for seeded Gaussian prototypes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{EmbeddingSet, MetricsError, ProbVector};
use crate::dsp::{self, AudioClip, StftConfig};
use crate::separator::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub stft: StftConfig,
    pub bands: usize,
    pub classes: usize,
    pub prototype_seed: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            bands: 20,
            classes: 32,
            prototype_seed: 0x5eed,
        }
    }
}

impl EmbedderConfig {
    /// Embedding length `2 * bands`.
    pub fn embedding_dim(&self) -> usize {
        2 * self.bands
    }

    fn validate(&self) -> Result<(), MetricsError> {
        self.stft.validate()?;
        if self.bands == 0 || self.bands > self.stft.freq_bins() {
            return Err(MetricsError::InvalidArgument(format!(
                "bands must be in 1..={}, got {}",
                self.stft.freq_bins(),
                self.bands
            )));
        }
        if self.classes == 0 {
            return Err(MetricsError::InvalidArgument("classes must be >= 1".into()));
        }
        Ok(())
    }

    /// `classes x embedding_dim` prototypes; a pure function of the config.
    fn prototypes(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.prototype_seed);
        (0..self.classes)
            .map(|_| (0..self.embedding_dim()).map(|_| rng.sample(StandardNormal)).collect())
            .collect()
    }
}

/// Per-frame band log-energies, one row per STFT frame.
pub fn frame_features(clip: &AudioClip, cfg: &EmbedderConfig) -> Result<EmbeddingSet, MetricsError> {
    cfg.validate()?;
    let spec = dsp::stft(clip, &cfg.stft)?;
    let (bins, frames) = spec.shape();
    let eps = cfg.stft.log_epsilon;
    let rows: Vec<Vec<f64>> = (0..frames)
        .map(|t| {
            (0..cfg.bands)
                .map(|b| {
                    let lo = b * bins / cfg.bands;
                    let hi = (b + 1) * bins / cfg.bands;
                    let power: f64 = (lo..hi).map(|k| spec.get(k, t).norm_sqr()).sum();
                    (power + eps).ln()
                })
                .collect()
        })
        .collect();
    EmbeddingSet::from_rows(&rows)
}

/// Per-band mean then per-band population standard deviation over frames.
pub fn embed_audio(clip: &AudioClip, cfg: &EmbedderConfig) -> Result<Vec<f64>, MetricsError> {
    let feats = frame_features(clip, cfg)?;
    let n = feats.len() as f64;
    let means: Vec<f64> = feats.vectors.column_iter().map(|c| c.sum() / n).collect();
    let stds = feats
        .vectors
        .column_iter()
        .zip(&means)
        .map(|(c, m)| (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt());
    Ok(means.iter().copied().chain(stds).collect())
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn classify_probs(clip: &AudioClip, cfg: &EmbedderConfig) -> Result<ProbVector, MetricsError> {
    let emb = embed_audio(clip, cfg)?;
    ProbVector::new(cfg.prototypes().iter().map(|p| sigmoid(cosine(&emb, p))).collect())
}
