//! Query-conditioned mask prediction.
//!
//! Features `f_s = unet(ln(m + eps))` are computed once per mixture. Each
//! query embedding `e` is projected to channel gates `f_e = sigmoid(W_e e + b_e)`
//! and the mask is `p = sigmoid(<s * f_e, f_s> + b)`, the inner product running
//! over channels at every time-frequency bin.

mod checkpoint;
mod unet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{self, AudioClip, ComplexSpectrogram, DspError, Grid, LogFreqWarp, MagnitudeSpectrogram, StftConfig};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use unet::{Conv2d, Tensor3, UnetArch, UnetCache, UnetWeights, LEAKY_SLOPE};

pub type FeatureMap = Tensor3;

/// Dominance threshold of the ideal binary mask.
pub const IBM_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum SeparatorError {
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("grid {rows}x{cols} is too small for the encoder (need at least 4x4)")]
    TooSmall { rows: usize, cols: usize },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("no queries given")]
    NoQueries,
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl SeparatorError {
    pub fn is_io(&self) -> bool {
        match self {
            SeparatorError::Io { .. } | SeparatorError::Checkpoint(_) => true,
            SeparatorError::Dsp(e) => e.is_io(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEmbedding {
    pub values: Vec<f64>,
}

impl QueryEmbedding {
    pub fn new(values: Vec<f64>) -> Result<Self, SeparatorError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SeparatorError::NonFinite("query embedding"));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Time-frequency gain grid with entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationMask {
    pub values: Grid,
}

impl SeparationMask {
    pub fn new(values: Grid) -> Result<Self, SeparatorError> {
        if let Some(v) = values.data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(SeparatorError::InvalidMask(format!("entry {v} outside [0, 1]")));
        }
        Ok(Self { values })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    pub fn mean_abs_difference(&self, other: &SeparationMask) -> f64 {
        let n = self.values.data.len().max(1) as f64;
        self.values
            .data
            .iter()
            .zip(&other.values.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: UnetArch,
    /// Feature channels `C`.
    pub channels: usize,
    /// Query embedding dimension `D`.
    pub embed_dim: usize,
    /// Width of the first encoder level.
    pub base_channels: usize,
    /// When set, the log magnitude is warped onto this many log-frequency
    /// bins before the U-Net and masks are mapped back afterwards.
    pub log_freq_bins: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: UnetArch::Unet,
            channels: 16,
            embed_dim: 16,
            base_channels: 8,
            log_freq_bins: None,
        }
    }
}

/// Learnable parameters of the mask predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub unet: UnetWeights,
    /// `C x D`, row-major.
    pub embed_weight: Vec<f64>,
    pub embed_bias: Vec<f64>,
    pub channel_scale: Vec<f64>,
    pub mask_bias: f64,
}

impl ModelParams {
    pub fn zeros(config: ModelConfig) -> Self {
        Self {
            config,
            unet: UnetWeights::zeros(config.arch, config.base_channels, config.channels),
            embed_weight: vec![0.0; config.channels * config.embed_dim],
            embed_bias: vec![0.0; config.channels],
            channel_scale: vec![0.0; config.channels],
            mask_bias: 0.0,
        }
    }

    /// Fan-in scaled uniform weights, zero biases, unit channel scale.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(config);
        for (_, conv) in params.unet.layers.iter_mut() {
            let bound = (6.0 / conv.fan_in() as f64).sqrt();
            conv.weight
                .iter_mut()
                .for_each(|w| *w = rng.random_range(-bound..bound));
        }
        let bound = (6.0 / config.embed_dim.max(1) as f64).sqrt();
        params
            .embed_weight
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-bound..bound));
        params.channel_scale.iter_mut().for_each(|s| *s = 1.0);
        params
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config)
    }

    /// Every parameter tensor with a stable name.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (name, conv) in &self.unet.layers {
            out.push((format!("unet.{name}.weight"), conv.weight.as_slice()));
            out.push((format!("unet.{name}.bias"), conv.bias.as_slice()));
        }
        out.push(("embed_weight".to_string(), self.embed_weight.as_slice()));
        out.push(("embed_bias".to_string(), self.embed_bias.as_slice()));
        out.push(("channel_scale".to_string(), self.channel_scale.as_slice()));
        out.push(("mask_bias".to_string(), std::slice::from_ref(&self.mask_bias)));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (name, conv) in self.unet.layers.iter_mut() {
            out.push((format!("unet.{name}.weight"), conv.weight.as_mut_slice()));
            out.push((format!("unet.{name}.bias"), conv.bias.as_mut_slice()));
        }
        out.push(("embed_weight".to_string(), self.embed_weight.as_mut_slice()));
        out.push(("embed_bias".to_string(), self.embed_bias.as_mut_slice()));
        out.push(("channel_scale".to_string(), self.channel_scale.as_mut_slice()));
        out.push(("mask_bias".to_string(), std::slice::from_mut(&mut self.mask_bias)));
        out
    }

    /// Shape of every tensor, in [`ModelParams::tensors`] order.
    pub fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for (_, conv) in &self.unet.layers {
            out.push(vec![conv.out_channels, conv.in_channels, conv.kernel, conv.kernel]);
            out.push(vec![conv.out_channels]);
        }
        let (c, d) = (self.config.channels, self.config.embed_dim);
        out.push(vec![c, d]);
        out.push(vec![c]);
        out.push(vec![c]);
        out.push(vec![]);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        let src = other.tensors();
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(src) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += scale * s);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn grid_to_tensor(grid: &Grid) -> Tensor3 {
    Tensor3 {
        channels: 1,
        height: grid.rows,
        width: grid.cols,
        data: grid.data.clone(),
    }
}

fn check_unet_input(log_mag: &Grid, params: &ModelParams) -> Result<(), SeparatorError> {
    if !log_mag.is_finite() {
        return Err(SeparatorError::NonFinite("log magnitude"));
    }
    let min = match params.config.arch {
        UnetArch::Unet => 4,
        UnetArch::Pointwise => 1,
    };
    if log_mag.rows < min || log_mag.cols < min {
        return Err(SeparatorError::TooSmall {
            rows: log_mag.rows,
            cols: log_mag.cols,
        });
    }
    Ok(())
}

/// Runs the encoder-decoder and keeps activations for backpropagation.
pub fn unet_forward_cached(log_mag: &Grid, params: &ModelParams) -> Result<(FeatureMap, UnetCache), SeparatorError> {
    check_unet_input(log_mag, params)?;
    Ok(params.unet.forward(&grid_to_tensor(log_mag)))
}

/// `C x F x T` features of a log-magnitude grid.
pub fn unet_forward(log_mag: &Grid, params: &ModelParams) -> Result<FeatureMap, SeparatorError> {
    unet_forward_cached(log_mag, params).map(|(f, _)| f)
}

/// Channel gates `sigmoid(W_e e + b_e)`.
pub fn embed_project(e: &QueryEmbedding, params: &ModelParams) -> Result<Vec<f64>, SeparatorError> {
    let (c, d) = (params.config.channels, params.config.embed_dim);
    if e.dim() != d {
        return Err(SeparatorError::DimensionMismatch {
            what: "query embedding",
            expected: d,
            got: e.dim(),
        });
    }
    Ok((0..c)
        .map(|ch| {
            let row = &params.embed_weight[ch * d..(ch + 1) * d];
            let z: f64 = row.iter().zip(&e.values).map(|(w, x)| w * x).sum::<f64>() + params.embed_bias[ch];
            sigmoid(z)
        })
        .collect())
}

/// Pre-sigmoid mask logits `<s * f_e, f_s> + b` per bin.
pub(crate) fn mask_logits(features: &FeatureMap, gates: &[f64], params: &ModelParams) -> Grid {
    let (h, w) = (features.height, features.width);
    let mut z = Grid::filled(h, w, params.mask_bias);
    for (ch, (&s, &g)) in params.channel_scale.iter().zip(gates).enumerate() {
        let k = s * g;
        if k == 0.0 {
            continue;
        }
        z.data.iter_mut().zip(features.plane(ch)).for_each(|(z, f)| *z += k * f);
    }
    z
}

pub fn predict_mask(
    features: &FeatureMap,
    gates: &[f64],
    params: &ModelParams,
) -> Result<SeparationMask, SeparatorError> {
    let c = params.config.channels;
    if features.channels != c {
        return Err(SeparatorError::DimensionMismatch {
            what: "feature channels",
            expected: c,
            got: features.channels,
        });
    }
    if gates.len() != c {
        return Err(SeparatorError::DimensionMismatch {
            what: "channel gates",
            expected: c,
            got: gates.len(),
        });
    }
    Ok(SeparationMask {
        values: mask_logits(features, gates, params).map(sigmoid),
    })
}

/// 1 where `source >= threshold * mixture`, else 0.
pub fn ideal_binary_mask_with_threshold(
    source: &MagnitudeSpectrogram,
    mixture: &MagnitudeSpectrogram,
    threshold: f64,
) -> Result<SeparationMask, SeparatorError> {
    if source.shape() != mixture.shape() {
        return Err(DspError::ShapeMismatch {
            expected: mixture.shape(),
            got: source.shape(),
        }
        .into());
    }
    let data = source
        .bins
        .data
        .iter()
        .zip(&mixture.bins.data)
        .map(|(&s, &m)| if s >= threshold * m { 1.0 } else { 0.0 })
        .collect();
    Ok(SeparationMask {
        values: Grid {
            rows: mixture.bins.rows,
            cols: mixture.bins.cols,
            data,
        },
    })
}

pub fn ideal_binary_mask(
    source: &MagnitudeSpectrogram,
    mixture: &MagnitudeSpectrogram,
) -> Result<SeparationMask, SeparatorError> {
    ideal_binary_mask_with_threshold(source, mixture, IBM_THRESHOLD)
}

/// The grid the U-Net sees for a mixture, plus the warp tables when the model
/// works on a log-frequency axis.
pub fn model_input(
    mag: &MagnitudeSpectrogram,
    config: &ModelConfig,
) -> Result<(Grid, Option<LogFreqWarp>), SeparatorError> {
    let eps = mag.config.log_epsilon;
    match config.log_freq_bins {
        None => Ok((dsp::log_compress(mag, eps)?, None)),
        Some(bins) => {
            let (warped, tables) = dsp::log_freq_warp(mag, bins)?;
            Ok((dsp::log_compress(&warped, eps)?, Some(tables)))
        }
    }
}

/// Predicted masks on the linear frequency axis of `mag`, one per query.
pub fn predict_masks(
    mag: &MagnitudeSpectrogram,
    queries: &[QueryEmbedding],
    params: &ModelParams,
) -> Result<Vec<SeparationMask>, SeparatorError> {
    if queries.is_empty() {
        return Err(SeparatorError::NoQueries);
    }
    let (input, warp) = model_input(mag, &params.config)?;
    let features = unet_forward(&input, params)?;
    queries
        .iter()
        .map(|q| {
            let gates = embed_project(q, params)?;
            let mask = predict_mask(&features, &gates, params)?;
            match &warp {
                None => Ok(mask),
                Some(tables) => Ok(SeparationMask {
                    values: tables.unwarp(&mask.values)?.map(|v| v.clamp(0.0, 1.0)),
                }),
            }
        })
        .collect()
}

/// Resynthesises one clip per mask using the mixture phase.
pub fn separate_with_masks(
    spec: &ComplexSpectrogram,
    masks: &[SeparationMask],
) -> Result<Vec<AudioClip>, SeparatorError> {
    masks
        .iter()
        .map(|m| Ok(dsp::istft(&dsp::apply_mask(spec, m)?)?))
        .collect()
}

/// End-to-end separation: one output clip per query, each as long as `mix`.
pub fn separate(
    mix: &AudioClip,
    queries: &[QueryEmbedding],
    params: &ModelParams,
    stft_config: &StftConfig,
) -> Result<Vec<AudioClip>, SeparatorError> {
    if queries.is_empty() {
        return Err(SeparatorError::NoQueries);
    }
    let spec = dsp::stft(mix, stft_config)?;
    let mag = dsp::magnitude(&spec)?;
    let masks = predict_masks(&mag, queries, params)?;
    separate_with_masks(&spec, &masks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{magnitude, stft};
    use crate::metrics::si_sdr;
    use std::f64::consts::PI;

    fn tone(freq: f64, len: usize, sr: u32, amp: f64) -> AudioClip {
        AudioClip::new(
            (0..len)
                .map(|i| amp * (2.0 * PI * freq * i as f64 / sr as f64).sin())
                .collect(),
            sr,
        )
        .unwrap()
    }

    fn sum(a: &AudioClip, b: &AudioClip) -> AudioClip {
        AudioClip::new(
            a.samples.iter().zip(&b.samples).map(|(x, y)| x + y).collect(),
            a.sample_rate,
        )
        .unwrap()
    }

    fn random_grid(rows: usize, cols: usize, seed: u64) -> Grid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random_range(-3.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn pointwise(channels: usize, embed_dim: usize) -> ModelConfig {
        ModelConfig {
            arch: UnetArch::Pointwise,
            channels,
            embed_dim,
            base_channels: 1,
            log_freq_bins: None,
        }
    }

    #[test]
    fn zero_weights_give_zero_features() {
        let params = ModelParams::zeros(ModelConfig::default());
        let f = unet_forward(&random_grid(9, 7, 1), &params).unwrap();
        assert_eq!((f.channels, f.height, f.width), (16, 9, 7));
        assert!(f.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unet_is_deterministic_and_shape_preserving() {
        let params = ModelParams::init(ModelConfig::default(), 42);
        for (rows, cols) in [(4, 4), (5, 7), (33, 17), (129, 32)] {
            let grid = random_grid(rows, cols, 2);
            let a = unet_forward(&grid, &params).unwrap();
            let b = unet_forward(&grid, &ModelParams::init(ModelConfig::default(), 42)).unwrap();
            assert_eq!(a, b);
            assert_eq!((a.height, a.width), (rows, cols));
        }
    }

    #[test]
    fn unet_rejects_small_or_non_finite_input() {
        let params = ModelParams::init(ModelConfig::default(), 1);
        assert!(matches!(
            unet_forward(&random_grid(3, 8, 1), &params),
            Err(SeparatorError::TooSmall { .. })
        ));
        let mut g = random_grid(8, 8, 1);
        g.data[5] = f64::NAN;
        assert!(matches!(unet_forward(&g, &params), Err(SeparatorError::NonFinite(_))));
    }

    #[test]
    fn pointwise_unet_is_a_hand_computable_affine_map() {
        let mut params = ModelParams::zeros(pointwise(2, 2));
        params.unet.layers[0].1.weight = vec![2.0, -1.0];
        params.unet.layers[0].1.bias = vec![0.5, 3.0];
        let grid = Grid::from_vec(2, 2, vec![1.0, -2.0, 0.25, 4.0]).unwrap();
        let f = unet_forward(&grid, &params).unwrap();
        assert_eq!(f.plane(0), &[2.5, -3.5, 1.0, 8.5]);
        assert_eq!(f.plane(1), &[2.0, 5.0, 2.75, -1.0]);
    }

    #[test]
    fn embed_projection() {
        let mut params = ModelParams::zeros(pointwise(3, 2));
        let e = QueryEmbedding::new(vec![0.3, -0.7]).unwrap();
        assert_eq!(embed_project(&e, &params).unwrap(), vec![0.5; 3]);
        params.embed_bias = vec![40.0; 3];
        assert!(embed_project(&e, &params).unwrap().iter().all(|&v| v > 1.0 - 1e-12));

        params.embed_weight = vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6];
        params.embed_bias = vec![0.01, -0.02, 0.03];
        let got = embed_project(&e, &params).unwrap();
        for c in 0..3 {
            let z = params.embed_weight[2 * c] * 0.3 + params.embed_weight[2 * c + 1] * -0.7 + params.embed_bias[c];
            assert_eq!(got[c], 1.0 / (1.0 + (-z).exp()));
        }
        let wrong = QueryEmbedding::new(vec![1.0]).unwrap();
        assert!(matches!(
            embed_project(&wrong, &params),
            Err(SeparatorError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mask_prediction_cases() {
        let mut params = ModelParams::zeros(pointwise(2, 2));
        let features = Tensor3 {
            channels: 2,
            height: 2,
            width: 2,
            data: vec![1.0, -1.0, 2.0, 0.0, 0.5, 0.5, -3.0, 1.0],
        };
        // s = 0
        let m = predict_mask(&features, &[0.3, 0.9], &params).unwrap();
        assert!(m.values.data.iter().all(|&v| v == 0.5));
        // f_s = 0
        params.channel_scale = vec![1.0, 2.0];
        params.mask_bias = 0.7;
        let zero = Tensor3::zeros(2, 2, 2);
        let m = predict_mask(&zero, &[0.3, 0.9], &params).unwrap();
        assert!(m.values.data.iter().all(|&v| v == sigmoid(0.7)));
        // hand computation: z = 1*0.3*f0 + 2*0.9*f1 + 0.7
        let m = predict_mask(&features, &[0.3, 0.9], &params).unwrap();
        let expected: [f64; 4] = [
            0.3 * 1.0 + 1.8 * 0.5 + 0.7,
            -0.3 + 1.8 * 0.5 + 0.7,
            0.3 * 2.0 + 1.8 * -3.0 + 0.7,
            0.3 * 0.0 + 1.8 * 1.0 + 0.7,
        ];
        for (got, z) in m.values.data.iter().zip(expected) {
            assert!((got - 1.0 / (1.0 + (-z).exp())).abs() < 1e-15);
        }
        assert!(predict_mask(&features, &[0.3], &params).is_err());
    }

    #[test]
    fn pointwise_predictor_is_per_bin_logistic_regression() {
        let mut params = ModelParams::init(pointwise(3, 2), 5);
        params.mask_bias = -0.4;
        params.channel_scale = vec![0.5, -1.5, 2.0];
        let grid = random_grid(4, 4, 9);
        let e = QueryEmbedding::new(vec![0.8, -0.2]).unwrap();
        let features = unet_forward(&grid, &params).unwrap();
        let gates = embed_project(&e, &params).unwrap();
        let mask = predict_mask(&features, &gates, &params).unwrap();
        // brute force: p = sigmoid(a * x + c) with a = sum_c s f_e w, c = sum_c s f_e b_c + b
        let conv = &params.unet.layers[0].1;
        let slope: f64 = (0..3)
            .map(|c| params.channel_scale[c] * gates[c] * conv.weight[c])
            .sum();
        let offset: f64 = (0..3)
            .map(|c| params.channel_scale[c] * gates[c] * conv.bias[c])
            .sum::<f64>()
            + params.mask_bias;
        for (x, p) in grid.data.iter().zip(&mask.values.data) {
            assert!((p - 1.0 / (1.0 + (-(slope * x + offset)).exp())).abs() < 1e-12);
        }
    }

    #[test]
    fn ideal_binary_masks() {
        let cfg = StftConfig::default();
        let sr = 16_000;
        let low = tone(500.0, 16_000, sr, 0.5);
        let high = tone(4000.0, 16_000, sr, 0.5);
        let mix = sum(&low, &high);
        let mix_mag = magnitude(&stft(&mix, &cfg).unwrap()).unwrap();
        let ones = ideal_binary_mask(&mix_mag, &mix_mag).unwrap();
        assert!(ones.values.data.iter().all(|&v| v == 1.0));

        let silent = magnitude(&stft(&AudioClip::silence(16_000, sr), &cfg).unwrap()).unwrap();
        let noisy = magnitude(&stft(&tone(1000.0, 16_000, sr, 0.3), &cfg).unwrap()).unwrap();
        let none = ideal_binary_mask(&silent, &noisy).unwrap();
        assert!(noisy.bins.data.iter().all(|&m| m > 0.0));
        assert!(none.values.data.iter().all(|&v| v == 0.0));

        // disjoint bands: each mask is the indicator of the bins its source
        // dominates, which cover the tone's main lobe and not the other's
        let low_mag = magnitude(&stft(&low, &cfg).unwrap()).unwrap();
        let high_mag = magnitude(&stft(&high, &cfg).unwrap()).unwrap();
        let m_low = ideal_binary_mask(&low_mag, &mix_mag).unwrap();
        let m_high = ideal_binary_mask(&high_mag, &mix_mag).unwrap();
        let k_low = (500.0 * 512.0 / 16_000.0) as usize;
        let k_high = (4000.0 * 512.0 / 16_000.0) as usize;
        for t in 1..mix_mag.bins.cols - 1 {
            for k in k_low - 1..=k_low + 1 {
                assert_eq!(m_low.values.get(k, t), 1.0);
                assert_eq!(m_high.values.get(k, t), 0.0);
            }
            for k in k_high - 1..=k_high + 1 {
                assert_eq!(m_high.values.get(k, t), 1.0);
                assert_eq!(m_low.values.get(k, t), 0.0);
            }
        }
        let wrong = MagnitudeSpectrogram::new(Grid::zeros(3, 3), cfg, sr).unwrap();
        assert!(ideal_binary_mask(&wrong, &mix_mag).is_err());
    }

    #[test]
    fn separate_with_saturated_masks() {
        let cfg = StftConfig::default();
        let mix = sum(&tone(300.0, 8000, 16_000, 0.4), &tone(2500.0, 8000, 16_000, 0.2));
        let q = vec![
            QueryEmbedding::new(vec![0.1; 16]).unwrap(),
            QueryEmbedding::new(vec![-0.4; 16]).unwrap(),
        ];
        let mut params = ModelParams::init(ModelConfig::default(), 3);
        params.channel_scale = vec![0.0; 16];
        params.mask_bias = 40.0;
        let outs = separate(&mix, &q, &params, &cfg).unwrap();
        assert_eq!(outs.len(), 2);
        for out in &outs {
            assert_eq!(out.len(), mix.len());
            let err: f64 = out.samples[256..7744]
                .iter()
                .zip(&mix.samples[256..7744])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let norm: f64 = mix.samples[256..7744].iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(err / norm < 1e-6);
        }
        params.mask_bias = -40.0;
        for out in separate(&mix, &q, &params, &cfg).unwrap() {
            assert!(out.rms() < 1e-3 * mix.rms());
        }
        assert!(matches!(
            separate(&mix, &[], &params, &cfg),
            Err(SeparatorError::NoQueries)
        ));
    }

    #[test]
    fn oracle_mask_separation_of_disjoint_tones() {
        let cfg = StftConfig::default();
        let a = tone(440.0, 16_000, 16_000, 0.5);
        let b = tone(3000.0, 16_000, 16_000, 0.3);
        let mix = sum(&a, &b);
        let spec = stft(&mix, &cfg).unwrap();
        let mix_mag = magnitude(&spec).unwrap();
        let masks: Vec<_> = [&a, &b]
            .iter()
            .map(|s| ideal_binary_mask(&magnitude(&stft(s, &cfg).unwrap()).unwrap(), &mix_mag).unwrap())
            .collect();
        let outs = separate_with_masks(&spec, &masks).unwrap();
        assert!(si_sdr(&outs[0], &a).unwrap() >= 20.0);
        assert!(si_sdr(&outs[1], &b).unwrap() >= 20.0);
    }

    #[test]
    fn warped_model_produces_linear_axis_masks() {
        let cfg = StftConfig::default();
        let config = ModelConfig {
            log_freq_bins: Some(64),
            ..ModelConfig::default()
        };
        let params = ModelParams::init(config, 8);
        let mix = tone(700.0, 8000, 16_000, 0.3);
        let mag = magnitude(&stft(&mix, &cfg).unwrap()).unwrap();
        let q = QueryEmbedding::new(vec![0.25; 16]).unwrap();
        let masks = predict_masks(&mag, &[q], &params).unwrap();
        assert_eq!(masks[0].shape(), mag.shape());
        assert!(masks[0].values.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn distinct_queries_change_the_mask() {
        let params = ModelParams::init(ModelConfig::default(), 12);
        let grid = random_grid(16, 16, 3);
        let features = unet_forward(&grid, &params).unwrap();
        let mut e1 = vec![0.0; 16];
        let e2 = e1.clone();
        e1[4] = 10.0;
        let m1 = predict_mask(
            &features,
            &embed_project(&QueryEmbedding::new(e1).unwrap(), &params).unwrap(),
            &params,
        )
        .unwrap();
        let m2 = predict_mask(
            &features,
            &embed_project(&QueryEmbedding::new(e2).unwrap(), &params).unwrap(),
            &params,
        )
        .unwrap();
        assert_ne!(m1, m2);
        assert!(m1.values.data.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
