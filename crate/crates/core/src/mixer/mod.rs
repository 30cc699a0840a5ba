//! Foreground-over-background mixture synthesis.
//!
//! Sources are resampled, trimmed or looped to the target duration and RMS
//! normalised. The background is then set `snr_db` below the foreground. If
//! the mixture would clip, every signal is scaled by the same factor.
//! Sources are quantised to 16-bit and the mixture is their integer sum, so
//! the stored mixture equals the sum of the stored sources exactly.

mod dataset;
mod resample;

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{self, dequantize_i16, quantize_i16, AudioClip, DspError};

pub use dataset::{
    build_dataset, query_text_for, DatasetConfig, ManifestEntry, MixtureManifest, Pairing, SnrPolicy, MANIFEST_FILE,
};
pub use resample::resample;

/// Foreground RMS before peak protection.
pub const REFERENCE_RMS: f64 = 0.1;
/// Peak allowed in the floating-point mixture before quantisation.
pub const PEAK_LIMIT: f64 = 0.99;

#[derive(Debug, Error)]
pub enum MixerError {
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no wav files in {0}")]
    EmptyDirectory(String),
    #[error("silent input: {0}")]
    SilentInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("manifest: {0}")]
    Manifest(String),
}

impl MixerError {
    pub fn is_io(&self) -> bool {
        match self {
            MixerError::Dsp(e) => e.is_io(),
            MixerError::Io { .. } | MixerError::EmptyDirectory(_) | MixerError::Manifest(_) => true,
            MixerError::SilentInput(_) | MixerError::InvalidConfig(_) => false,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MixerError::Io {
            path: path.into().display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub foreground_path: PathBuf,
    pub background_path: PathBuf,
    pub snr_db: f64,
    pub target_rate: u32,
    pub duration_s: f64,
    /// Chooses the excerpt offsets within sources longer than the duration.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixOutput {
    pub mixture: AudioClip,
    /// Foreground first, then background.
    pub sources: Vec<AudioClip>,
    /// Common factor applied for clipping protection (1 when none was needed).
    pub rescale: f64,
    /// Integer samples as written to disk.
    pub mixture_pcm: Vec<i16>,
    pub sources_pcm: Vec<Vec<i16>>,
}

/// Scaled copy with the requested RMS.
pub fn normalize_rms(clip: &AudioClip, target_rms: f64) -> Result<AudioClip, MixerError> {
    if !(target_rms > 0.0) || !target_rms.is_finite() {
        return Err(MixerError::InvalidConfig(format!(
            "target rms must be positive, got {target_rms}"
        )));
    }
    let rms = clip.rms();
    if rms == 0.0 {
        return Err(MixerError::SilentInput("cannot normalise an all-zero clip".into()));
    }
    if rms == target_rms {
        return Ok(clip.clone());
    }
    Ok(clip.scaled(target_rms / rms))
}

/// `len` samples starting at a seeded offset, looping when the clip is short.
fn excerpt(clip: &AudioClip, len: usize, rng: &mut ChaCha8Rng) -> AudioClip {
    let n = clip.len();
    let offset = if n > len { rng.random_range(0..=n - len) } else { 0 };
    let samples = (0..len).map(|i| clip.samples[(offset + i) % n]).collect();
    AudioClip {
        samples,
        sample_rate: clip.sample_rate,
    }
}

/// Mixes in-memory clips; see the module docs for the recipe.
pub fn mix_clips(
    foreground: &AudioClip,
    background: &AudioClip,
    snr_db: f64,
    target_rate: u32,
    duration_s: f64,
    seed: u64,
) -> Result<MixOutput, MixerError> {
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(MixerError::InvalidConfig(format!(
            "duration must be positive, got {duration_s}"
        )));
    }
    if target_rate == 0 {
        return Err(MixerError::InvalidConfig("target rate must be positive".into()));
    }
    if !snr_db.is_finite() {
        return Err(MixerError::InvalidConfig("snr_db must be finite".into()));
    }
    if foreground.is_empty() || background.is_empty() {
        return Err(DspError::EmptyClip.into());
    }
    let len = (duration_s * f64::from(target_rate)).round() as usize;
    if len == 0 {
        return Err(MixerError::InvalidConfig("duration shorter than one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fg = excerpt(&resample(foreground, target_rate)?, len, &mut rng);
    let bg = excerpt(&resample(background, target_rate)?, len, &mut rng);
    let fg = normalize_rms(&fg, REFERENCE_RMS)
        .map_err(|_| MixerError::SilentInput("foreground excerpt is silent".into()))?;
    let bg = normalize_rms(&bg, REFERENCE_RMS * 10f64.powf(-snr_db / 20.0))
        .map_err(|_| MixerError::SilentInput("background excerpt is silent".into()))?;

    let peak = fg
        .samples
        .iter()
        .zip(&bg.samples)
        .map(|(a, b)| (a + b).abs())
        .chain(fg.samples.iter().map(|v| v.abs()))
        .chain(bg.samples.iter().map(|v| v.abs()))
        .fold(0.0, f64::max);
    let rescale = if peak > PEAK_LIMIT { PEAK_LIMIT / peak } else { 1.0 };
    if rescale != 1.0 {
        log::info!("mixture peak {peak:.3} rescaled by {rescale:.6}");
    }

    let sources_pcm: Vec<Vec<i16>> = [fg, bg]
        .iter()
        .map(|c| c.samples.iter().map(|&v| quantize_i16(v * rescale)).collect())
        .collect();
    // The float peak is at most PEAK_LIMIT, so the integer sum cannot overflow.
    let mixture_pcm: Vec<i16> = (0..len)
        .map(|i| {
            let s: i32 = sources_pcm.iter().map(|s| i32::from(s[i])).sum();
            i16::try_from(s).expect("mixture within 16-bit range")
        })
        .collect();
    let to_clip = |pcm: &[i16]| AudioClip {
        samples: pcm.iter().map(|&q| dequantize_i16(q)).collect(),
        sample_rate: target_rate,
    };
    Ok(MixOutput {
        mixture: to_clip(&mixture_pcm),
        sources: sources_pcm.iter().map(|s| to_clip(s)).collect(),
        rescale,
        mixture_pcm,
        sources_pcm,
    })
}

/// Reads both files and mixes them.
pub fn mix(spec: &MixSpec) -> Result<MixOutput, MixerError> {
    let fg = dsp::read_wav(&spec.foreground_path)?;
    let bg = dsp::read_wav(&spec.background_path)?;
    mix_clips(&fg, &bg, spec.snr_db, spec.target_rate, spec.duration_s, spec.seed)
}

#[cfg(test)]
mod tests;
