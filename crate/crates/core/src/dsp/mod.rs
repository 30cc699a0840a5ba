//! Time-frequency analysis and synthesis.
//!
//! Frames are centred: the signal is reflect-padded by `window_size / 2` on
//! both sides so frame `t` is centred on sample `t * hop_size`. For a clip of
//! `len` samples (zero-padded to at least one window) the frame count is
//! `1 + len / hop_size` (integer division).

mod stft;
mod warp;
mod wav;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use rustfft::num_complex::Complex64;
pub use stft::{apply_mask, istft, log_compress, magnitude, stft, window_energy_gain};
pub use warp::{log_freq_warp, LogFreqWarp, WARP_MIN_FREQ_HZ};
pub use wav::{dequantize_i16, quantize_i16, read_wav, write_wav, write_wav_i16};

#[derive(Debug, Error)]
pub enum DspError {
    #[error("audio clip is empty")]
    EmptyClip,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid stft configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("spectrogram does not match its configuration: {0}")]
    ConfigMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("wav {path}: {source}")]
    Wav {
        path: String,
        #[source]
        source: hound::Error,
    },
}

impl DspError {
    pub fn is_io(&self) -> bool {
        matches!(self, DspError::Wav { .. })
    }
}

/// Mono PCM audio.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, DspError> {
        if sample_rate == 0 {
            return Err(DspError::InvalidArgument("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(DspError::NonFinite("audio samples"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            (self.energy() / self.samples.len() as f64).sqrt()
        }
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    /// Periodic Hann, `0.5 - 0.5 cos(2πn/N)`.
    Hann,
    Rectangular,
}

impl WindowKind {
    pub fn coefficients(self, size: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => (0..size)
                .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / size as f64).cos())
                .collect(),
            WindowKind::Rectangular => vec![1.0; size],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_size: usize,
    pub hop_size: usize,
    pub window: WindowKind,
    pub log_epsilon: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_size: 512,
            hop_size: 256,
            window: WindowKind::Hann,
            log_epsilon: 1e-10,
        }
    }
}

impl StftConfig {
    pub fn new(window_size: usize, hop_size: usize) -> Self {
        Self {
            window_size,
            hop_size,
            ..Self::default()
        }
    }

    pub fn freq_bins(&self) -> usize {
        self.window_size / 2 + 1
    }

    /// Frame count for a clip of `len` samples.
    pub fn frames_for(&self, len: usize) -> usize {
        1 + len.max(self.window_size) / self.hop_size
    }

    /// Checks sizes, `log_epsilon`, and the constant-overlap-add condition of
    /// the window at the configured hop.
    pub fn validate(&self) -> Result<(), DspError> {
        let n = self.window_size;
        if n < 2 || !n.is_multiple_of(2) {
            return Err(DspError::InvalidConfig(format!(
                "window_size must be even and >= 2, got {n}"
            )));
        }
        if self.hop_size == 0 || self.hop_size > n {
            return Err(DspError::InvalidConfig(format!(
                "hop_size must be in 1..={n}, got {}",
                self.hop_size
            )));
        }
        if !(self.log_epsilon > 0.0) || !self.log_epsilon.is_finite() {
            return Err(DspError::InvalidConfig("log_epsilon must be positive".into()));
        }
        let w = self.window.coefficients(n);
        let sums: Vec<f64> = (0..self.hop_size)
            .map(|offset| w.iter().skip(offset).step_by(self.hop_size).sum())
            .collect();
        let mean = sums.iter().sum::<f64>() / sums.len() as f64;
        if mean <= 0.0 || sums.iter().any(|s| (s - mean).abs() > 1e-9 * mean) {
            return Err(DspError::InvalidConfig(format!(
                "{:?} window of size {n} is not constant-overlap-add at hop {}",
                self.window, self.hop_size
            )));
        }
        Ok(())
    }
}

/// Dense real grid, row-major with rows = frequency bins and cols = frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, DspError> {
        if data.len() != rows * cols {
            return Err(DspError::InvalidArgument(format!(
                "grid {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.data.iter().sum::<f64>() / self.data.len() as f64
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Complex STFT with the metadata needed for resynthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub freq_bins: usize,
    pub frames: usize,
    /// Row-major `freq_bins x frames`.
    pub bins: Vec<Complex64>,
    pub config: StftConfig,
    pub sample_rate: u32,
    /// Length of the analysed clip before any padding.
    pub signal_len: usize,
}

impl ComplexSpectrogram {
    pub fn shape(&self) -> (usize, usize) {
        (self.freq_bins, self.frames)
    }

    #[inline]
    pub fn get(&self, bin: usize, frame: usize) -> Complex64 {
        self.bins[bin * self.frames + frame]
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            bins: vec![Complex64::new(0.0, 0.0); self.bins.len()],
            ..self.clone()
        }
    }

    /// Centre frequency of `bin` in Hz.
    pub fn bin_frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate as f64 / self.config.window_size as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrogram {
    pub bins: Grid,
    pub config: StftConfig,
    pub sample_rate: u32,
}

impl MagnitudeSpectrogram {
    pub fn new(bins: Grid, config: StftConfig, sample_rate: u32) -> Result<Self, DspError> {
        if bins.data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(DspError::InvalidArgument(
                "magnitudes must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            bins,
            config,
            sample_rate,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.bins.shape()
    }
}
