//! Weighted binary cross-entropy training of the mask predictor.
//!
//! The per-sample objective is the mean over queries of the bin-averaged,
//! magnitude-weighted BCE between predicted and ground-truth masks. Bin
//! weights are `max(ln(1 + m), floor)`. Predictions are clamped to
//! `[1e-7, 1 - 1e-7]` inside the loss and the clamp is differentiated as part
//! of it, so clamped bins contribute no gradient.

mod optim;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{self, AudioClip, ComplexSpectrogram, Grid, MagnitudeSpectrogram, StftConfig};
use crate::separator::{
    self, embed_project, ideal_binary_mask, mask_logits, model_input, sigmoid, ModelConfig, ModelParams,
    QueryEmbedding, SeparationMask, SeparatorError, Tensor3,
};

pub use optim::{Adam, Optimizer, Sgd};

/// Predictions are clamped to `[PRED_CLAMP, 1 - PRED_CLAMP]` inside the loss.
pub const PRED_CLAMP: f64 = 1e-7;
pub const DEFAULT_WEIGHT_FLOOR: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Separator(#[from] SeparatorError),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite loss ({loss}) at epoch {epoch}")]
    Diverged { epoch: usize, loss: f64 },
}

impl From<dsp::DspError> for TrainError {
    fn from(e: dsp::DspError) -> Self {
        TrainError::Separator(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Seeds the per-epoch shuffling.
    pub seed: u64,
    pub weight_floor: f64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            learning_rate: 1e-3,
            epochs: 100,
            seed: 0,
            weight_floor: DEFAULT_WEIGHT_FLOOR,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(TrainError::InvalidConfig(format!(
                "learning_rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_floor > 0.0) {
            return Err(TrainError::InvalidConfig("weight_floor must be positive".into()));
        }
        Ok(())
    }
}

/// One mixture with its queries and ground-truth masks.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub mixture: MagnitudeSpectrogram,
    pub mixture_spec: Option<ComplexSpectrogram>,
    pub queries: Vec<QueryEmbedding>,
    pub gt_masks: Vec<SeparationMask>,
}

impl TrainSample {
    pub fn new(
        mixture: MagnitudeSpectrogram,
        queries: Vec<QueryEmbedding>,
        gt_masks: Vec<SeparationMask>,
    ) -> Result<Self, TrainError> {
        if queries.is_empty() || queries.len() != gt_masks.len() {
            return Err(TrainError::InvalidSample(format!(
                "{} queries for {} masks",
                queries.len(),
                gt_masks.len()
            )));
        }
        if let Some(m) = gt_masks.iter().find(|m| m.shape() != mixture.shape()) {
            return Err(TrainError::InvalidSample(format!(
                "mask shape {:?} differs from mixture {:?}",
                m.shape(),
                mixture.shape()
            )));
        }
        Ok(Self {
            mixture,
            mixture_spec: None,
            queries,
            gt_masks,
        })
    }

    /// Builds a sample from time-domain sources whose sum is the mixture; the
    /// targets are their ideal binary masks.
    pub fn from_sources(
        mixture: &AudioClip,
        sources: &[AudioClip],
        queries: Vec<QueryEmbedding>,
        stft: &StftConfig,
    ) -> Result<Self, TrainError> {
        let spec = dsp::stft(mixture, stft)?;
        let mag = dsp::magnitude(&spec)?;
        let masks = sources
            .iter()
            .map(|s| {
                let src = dsp::magnitude(&dsp::stft(s, stft)?)?;
                Ok(ideal_binary_mask(&src, &mag)?)
            })
            .collect::<Result<Vec<_>, TrainError>>()?;
        let mut sample = Self::new(mag, queries, masks)?;
        sample.mixture_spec = Some(spec);
        Ok(sample)
    }

    pub fn num_sources(&self) -> usize {
        self.queries.len()
    }
}

/// Entrywise `max(ln(1 + m), floor)`.
pub fn loss_weight(m: &MagnitudeSpectrogram, floor: f64) -> Result<Grid, TrainError> {
    if !(floor > 0.0) {
        return Err(TrainError::InvalidConfig("weight floor must be positive".into()));
    }
    Ok(loss_weight_grid(&m.bins, floor))
}

fn loss_weight_grid(m: &Grid, floor: f64) -> Grid {
    m.map(|v| v.ln_1p().max(floor))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BceOutcome {
    pub loss: f64,
    /// Prediction entries that fell outside the clamp range.
    pub clamped: usize,
}

#[inline]
fn bce(p: f64, g: f64) -> f64 {
    -(g * p.ln() + (1.0 - g) * (1.0 - p).ln())
}

#[inline]
fn clamp_pred(p: f64) -> (f64, bool) {
    if p < PRED_CLAMP {
        (PRED_CLAMP, true)
    } else if p > 1.0 - PRED_CLAMP {
        (1.0 - PRED_CLAMP, true)
    } else {
        (p, false)
    }
}

/// Mean over sources of the bin-averaged weighted BCE.
pub fn weighted_bce(
    pred: &[SeparationMask],
    gt: &[SeparationMask],
    mix: &MagnitudeSpectrogram,
    floor: f64,
) -> Result<BceOutcome, TrainError> {
    if pred.is_empty() || pred.len() != gt.len() {
        return Err(TrainError::InvalidSample(format!(
            "{} predictions for {} targets",
            pred.len(),
            gt.len()
        )));
    }
    let weight = loss_weight(mix, floor)?;
    let bins = weight.data.len() as f64;
    let mut clamped = 0;
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        if p.shape() != mix.shape() || g.shape() != mix.shape() {
            return Err(TrainError::InvalidSample("mask and mixture shapes differ".into()));
        }
        let mut acc = 0.0;
        for ((&pv, &gv), &w) in p.values.data.iter().zip(&g.values.data).zip(&weight.data) {
            let (q, hit) = clamp_pred(pv);
            clamped += hit as usize;
            acc += w * bce(q, gv);
        }
        total += acc / bins;
    }
    if clamped > 0 {
        log::debug!("weighted_bce: clamped {clamped} prediction entries");
    }
    Ok(BceOutcome {
        loss: total / pred.len() as f64,
        clamped,
    })
}

/// Mixture weights and targets on the axis the model predicts on.
fn loss_targets(
    sample: &TrainSample,
    warp: Option<&dsp::LogFreqWarp>,
    floor: f64,
) -> Result<(Grid, Vec<Grid>), TrainError> {
    match warp {
        None => Ok((
            loss_weight_grid(&sample.mixture.bins, floor),
            sample.gt_masks.iter().map(|m| m.values.clone()).collect(),
        )),
        Some(tables) => {
            let mix = tables.warp(&sample.mixture.bins)?;
            let targets = sample
                .gt_masks
                .iter()
                .map(|m| Ok(tables.warp(&m.values)?.map(|v| v.clamp(0.0, 1.0))))
                .collect::<Result<Vec<_>, TrainError>>()?;
            Ok((loss_weight_grid(&mix, floor), targets))
        }
    }
}

fn check_sample(sample: &TrainSample, params: &ModelParams) -> Result<(), TrainError> {
    if sample.queries.is_empty() || sample.queries.len() != sample.gt_masks.len() {
        return Err(TrainError::InvalidSample("queries and masks must pair up".into()));
    }
    if let Some(q) = sample.queries.iter().find(|q| q.dim() != params.config.embed_dim) {
        return Err(SeparatorError::DimensionMismatch {
            what: "query embedding",
            expected: params.config.embed_dim,
            got: q.dim(),
        }
        .into());
    }
    Ok(())
}

/// Loss of one sample and, optionally, its exact gradient.
pub fn sample_loss_and_grad(
    params: &ModelParams,
    sample: &TrainSample,
    floor: f64,
    with_grad: bool,
) -> Result<(f64, Option<ModelParams>), TrainError> {
    check_sample(sample, params)?;
    let (input, warp) = model_input(&sample.mixture, &params.config)?;
    let (features, cache) = separator::unet_forward_cached(&input, params)?;
    let (weights, targets) = loss_targets(sample, warp.as_ref(), floor)?;

    let n_src = sample.queries.len() as f64;
    let bins = weights.data.len() as f64;
    let channels = params.config.channels;
    let embed_dim = params.config.embed_dim;
    let mut grad = with_grad.then(|| params.zeros_like());
    let mut grad_features = with_grad.then(|| Tensor3::zeros(features.channels, features.height, features.width));
    let mut loss = 0.0;

    for (query, target) in sample.queries.iter().zip(&targets) {
        let gates = embed_project(query, params)?;
        let logits = mask_logits(&features, &gates, params);
        let scale = 1.0 / (n_src * bins);
        let mut acc = 0.0;
        let mut dz = with_grad.then(|| vec![0.0; logits.data.len()]);
        for (i, ((&z, &g), &w)) in logits.data.iter().zip(&target.data).zip(&weights.data).enumerate() {
            let p = sigmoid(z);
            let (q, clamped) = clamp_pred(p);
            acc += w * bce(q, g);
            if let Some(dz) = dz.as_mut() {
                if !clamped {
                    dz[i] = scale * w * (p - g);
                }
            }
        }
        loss += acc / bins / n_src;

        let (Some(grad), Some(dz), Some(gf)) = (grad.as_mut(), dz, grad_features.as_mut()) else {
            continue;
        };
        grad.mask_bias += dz.iter().sum::<f64>();
        for c in 0..channels {
            let plane = features.plane(c);
            let d_gate_scaled: f64 = dz.iter().zip(plane).map(|(a, b)| a * b).sum();
            let k = params.channel_scale[c] * gates[c];
            gf.plane_mut(c).iter_mut().zip(&dz).for_each(|(g, d)| *g += k * d);
            grad.channel_scale[c] += d_gate_scaled * gates[c];
            let d_gate = d_gate_scaled * params.channel_scale[c];
            let d_pre = d_gate * gates[c] * (1.0 - gates[c]);
            grad.embed_bias[c] += d_pre;
            let row = &mut grad.embed_weight[c * embed_dim..(c + 1) * embed_dim];
            row.iter_mut().zip(&query.values).for_each(|(w, e)| *w += d_pre * e);
        }
    }

    if let (Some(grad), Some(gf)) = (grad.as_mut(), grad_features.as_ref()) {
        params.unet.backward(&cache, gf, &mut grad.unet);
    }
    Ok((loss, grad))
}

/// Mean loss over a batch, without gradients.
pub fn batch_loss(params: &ModelParams, batch: &[TrainSample], floor: f64) -> Result<f64, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let losses = batch
        .par_iter()
        .map(|s| sample_loss_and_grad(params, s, floor, false).map(|(l, _)| l))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(losses.iter().sum::<f64>() / batch.len() as f64)
}

#[derive(Debug, Clone)]
pub struct GradientOutcome {
    pub loss: f64,
    pub grad: ModelParams,
}

/// Exact gradient of the mean batch loss. Per-sample work runs in parallel;
/// results are summed in batch order so the output is deterministic.
pub fn gradients(params: &ModelParams, batch: &[TrainSample], floor: f64) -> Result<GradientOutcome, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let parts = batch
        .par_iter()
        .map(|s| sample_loss_and_grad(params, s, floor, true))
        .collect::<Result<Vec<_>, _>>()?;
    let inv = 1.0 / batch.len() as f64;
    let mut grad = params.zeros_like();
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        grad.add_scaled(g.as_ref().expect("gradient requested"), inv);
    }
    loss *= inv;
    if !loss.is_finite() || !grad.is_finite() {
        return Err(TrainError::Diverged { epoch: 0, loss });
    }
    Ok(GradientOutcome { loss, grad })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the whole dataset after the epoch's updates (epoch 0 is
    /// the initial loss).
    pub loss: f64,
    pub wall_s: f64,
}

impl EpochRecord {
    /// `epoch<TAB>loss<TAB>wall seconds`.
    pub fn log_line(&self) -> String {
        format!("{}\t{:.9}\t{:.3}", self.epoch, self.loss, self.wall_s)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Lowest-loss parameters seen, so `final_loss <= initial_loss`.
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub best_epoch: usize,
}

/// Trains from a seeded initialisation.
pub fn train(
    dataset: &[TrainSample],
    model: ModelConfig,
    config: &TrainConfig,
    init_seed: u64,
) -> Result<TrainOutcome, TrainError> {
    fine_tune(ModelParams::init(model, init_seed), dataset, config, |_| {})
}

/// Continues training from existing parameters, calling `on_epoch` after every
/// epoch (and once for the initial loss).
pub fn fine_tune(
    initial: ModelParams,
    dataset: &[TrainSample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let start = Instant::now();
    let mut params = initial;
    let mut optimizer: Box<dyn Optimizer> = match config.optimizer {
        OptimizerKind::Adam => Box::new(Adam::new(&params)),
        OptimizerKind::Sgd => Box::new(Sgd),
    };
    let initial_loss = batch_loss(&params, dataset, config.weight_floor)?;
    if !initial_loss.is_finite() {
        return Err(TrainError::Diverged {
            epoch: 0,
            loss: initial_loss,
        });
    }
    let first = EpochRecord {
        epoch: 0,
        loss: initial_loss,
        wall_s: start.elapsed().as_secs_f64(),
    };
    on_epoch(&first);
    let mut history = vec![first];
    let mut best = (initial_loss, params.clone(), 0);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<TrainSample> = chunk.iter().map(|&i| dataset[i].clone()).collect();
            let step = gradients(&params, &batch, config.weight_floor).map_err(|e| match e {
                TrainError::Diverged { loss, .. } => TrainError::Diverged { epoch, loss },
                other => other,
            })?;
            optimizer.step(&mut params, &step.grad, config.learning_rate);
        }
        let loss = batch_loss(&params, dataset, config.weight_floor)?;
        if !loss.is_finite() || !params.is_finite() {
            return Err(TrainError::Diverged { epoch, loss });
        }
        let record = EpochRecord {
            epoch,
            loss,
            wall_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.push(record);
        if loss < best.0 {
            best = (loss, params.clone(), epoch);
        }
    }
    let (final_loss, params, best_epoch) = best;
    Ok(TrainOutcome {
        params,
        history,
        initial_loss,
        final_loss,
        best_epoch,
    })
}
