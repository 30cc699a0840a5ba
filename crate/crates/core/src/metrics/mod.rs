//! Evaluation metrics: Fréchet distance between fitted Gaussians, binary KL
//! divergence, SI-SDR and SDR, plus a deterministic band-energy embedder and
//! prototype classifier that supply the features and probabilities.

mod gaussian;
mod signal;
mod surrogate;
mod twofold;

use thiserror::Error;

use crate::dsp::DspError;

pub use gaussian::{fit_gaussian, frechet_distance, matrix_sqrt_psd, EmbeddingSet, GaussianStats};
pub use signal::{kld_binary, sdr, si_sdr, ProbVector, DB_CAP, PROB_CLAMP};
pub use surrogate::{classify_probs, embed_audio, frame_features, EmbedderConfig};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("length mismatch: {a} vs {b} samples")]
    LengthMismatch { a: usize, b: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("reference signal is all zeros")]
    ZeroTarget,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
