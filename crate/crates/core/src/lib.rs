// `!(x > 0.0)` is the NaN-rejecting form used in validation; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

//! Query-conditioned spectrogram-mask source separation.
//!
//! The crate is organised around the stages of a text-queried separation
//! pipeline:
//!
//! - [`dsp`]: STFT analysis/synthesis, log compression, log-frequency
//!   warping, mask application and WAV I/O.
//! - [`separator`]: the mask predictor (U-Net features gated by a projected
//!   query embedding), ideal binary masks and end-to-end separation.
//! - [`trainer`]: the weighted binary cross-entropy objective, exact
//!   reverse-mode gradients and an Adam training loop.
//! - [`metrics`]: Fréchet distance, binary KL divergence, SI-SDR and SDR,
//!   plus a deterministic surrogate embedder/classifier.
//! - [`mixer`]: foreground-over-background mixture datasets with a JSON Lines
//!   manifest.
//! - [`querygen`]: scene/region description providers, LLM textual
//!   subtraction, an offline fallback and a hashed text embedder.
//! - [`cli`]: the subcommands behind the `qsep` executable.

pub mod cli;
pub mod dsp;
pub mod metrics;
pub mod mixer;
pub mod querygen;
pub mod separator;
pub mod trainer;

mod error;
mod hash;

pub use error::{Error, Result};
