use std::collections::HashSet;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::args::*;
use super::config::{parse_enum, FileConfig, ProviderSection};
use super::plot;
use crate::dsp::{self, AudioClip, StftConfig};
use crate::metrics::{self, EmbedderConfig};
use crate::mixer::{self, DatasetConfig, ManifestEntry, MixtureManifest, Pairing, SnrPolicy};
use crate::querygen::{
    self, AuditLog, ProviderClient, ProviderConfig, QueryError, RegionalDescription, SceneDescription, TemplateStore,
    TextQuery,
};
use crate::separator::{self, Checkpoint, ModelConfig, ModelParams, QueryEmbedding, SeparationMask, UnetArch};
use crate::trainer::{self, OptimizerKind, TrainConfig, TrainSample};
use crate::Error;

pub const CHECKPOINT_FILE: &str = "model.json";
pub const TRAIN_LOG_FILE: &str = "train_log.tsv";
pub const REPORT_FILE: &str = "report.json";
pub const QUERY_FILE: &str = "query.json";
pub const AUDIT_FILE: &str = "audit.jsonl";

pub fn dispatch(command: Command, file: &FileConfig) -> Result<(), Error> {
    match command {
        Command::Mix(a) => cmd_mix(a, file),
        Command::Train(a) => cmd_train(a, file),
        Command::Separate(a) => cmd_separate(a, file),
        Command::Eval(a) => cmd_eval(a),
        Command::Query(a) => cmd_query(a, file),
        Command::Plot(a) => cmd_plot(a, file),
    }
}

fn ensure_dir(path: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(format!("--out {}", path.display()), e))
}

fn missing(flag: &str, path: &Path, what: &str) -> Error {
    Error::io(
        format!("{flag} {}", path.display()),
        std::io::Error::new(std::io::ErrorKind::NotFound, what.to_string()),
    )
}

fn require_dir(flag: &str, path: &Path) -> Result<(), Error> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(missing(flag, path, "is not a directory"))
    }
}

fn require_file(flag: &str, path: &Path) -> Result<(), Error> {
    if path.is_file() {
        Ok(())
    } else {
        Err(missing(flag, path, "does not exist"))
    }
}

fn stft_config(args: &StftArgs, file: &FileConfig) -> Result<StftConfig, Error> {
    let defaults = StftConfig::default();
    let cfg = StftConfig {
        window_size: args.window.or(file.stft.window).unwrap_or(defaults.window_size),
        hop_size: args.hop.or(file.stft.hop).unwrap_or(defaults.hop_size),
        ..defaults
    };
    cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;
    Ok(cfg)
}

fn embed_seed(flag: Option<u64>, file: &FileConfig) -> u64 {
    flag.or(file.embed_seed).unwrap_or(0)
}

fn manifest_base(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn select_split(entries: Vec<ManifestEntry>, split: SplitArg) -> Vec<ManifestEntry> {
    entries
        .into_iter()
        .filter(|e| match split {
            SplitArg::All => true,
            SplitArg::Train => e.split_tag == "train",
            SplitArg::Val => e.split_tag == "val",
        })
        .collect()
}

fn text_embeddings(texts: &[String], dim: usize, seed: u64) -> Result<Vec<QueryEmbedding>, Error> {
    texts
        .iter()
        .map(|t| Ok(querygen::text_to_embedding(&TextQuery::manual(t)?, dim, seed)))
        .collect()
}

// ---------------------------------------------------------------- mix

fn cmd_mix(a: MixArgs, file: &FileConfig) -> Result<(), Error> {
    require_dir("--fg", &a.fg)?;
    require_dir("--bg", &a.bg)?;
    let f = &file.mix;
    let defaults = DatasetConfig::default();
    let pairs = a
        .pairs
        .or(parse_enum("mix.pairs", f.pairs.as_ref())?)
        .unwrap_or(PairsArg::Exhaustive);
    let pairing = match pairs {
        PairsArg::Exhaustive => Pairing::Exhaustive,
        PairsArg::Random => Pairing::Random {
            count: a
                .count
                .or(f.count)
                .ok_or_else(|| Error::Usage("--pairs random needs --count".into()))?,
        },
    };
    let snr = match a.snr_db.or(f.snr_db) {
        Some(db) => SnrPolicy::Fixed { db },
        None => SnrPolicy::Uniform {
            min_db: a.snr_min.or(f.snr_min).unwrap_or(-5.0),
            max_db: a.snr_max.or(f.snr_max).unwrap_or(5.0),
        },
    };
    let config = DatasetConfig {
        pairing,
        seed: a.seed.or(f.seed).unwrap_or(defaults.seed),
        target_rate: a.rate.or(f.rate).unwrap_or(defaults.target_rate),
        duration_s: a.duration.or(f.duration).unwrap_or(defaults.duration_s),
        snr,
        val_fraction: a.val_fraction.or(f.val_fraction).unwrap_or(defaults.val_fraction),
    };
    ensure_dir(&a.out)?;
    let manifest = mixer::build_dataset(&a.fg, &a.bg, &a.out, &config)?;
    println!(
        "wrote {} entries to {}",
        manifest.entries.len(),
        a.out.join(mixer::MANIFEST_FILE).display()
    );
    Ok(())
}

// ---------------------------------------------------------------- train

fn model_config(a: &ModelArgs, file: &FileConfig) -> Result<ModelConfig, Error> {
    let f = &file.model;
    let d = ModelConfig::default();
    let arch = match a.arch.or(parse_enum("model.arch", f.arch.as_ref())?) {
        Some(ArchArg::Pointwise) => UnetArch::Pointwise,
        Some(ArchArg::Unet) | None => d.arch,
    };
    let cfg = ModelConfig {
        arch,
        channels: a.channels.or(f.channels).unwrap_or(d.channels),
        embed_dim: a.embed_dim.or(f.embed_dim).unwrap_or(d.embed_dim),
        base_channels: a.base_channels.or(f.base_channels).unwrap_or(d.base_channels),
        log_freq_bins: a.log_freq_bins.or(f.log_freq_bins),
    };
    if cfg.channels == 0 || cfg.embed_dim == 0 || cfg.base_channels == 0 {
        return Err(Error::Usage("model sizes must be at least 1".into()));
    }
    Ok(cfg)
}

/// Training samples for every entry, with ideal binary masks as targets.
fn load_samples(
    entries: &[ManifestEntry],
    base: &Path,
    stft: &StftConfig,
    dim: usize,
    seed: u64,
) -> Result<(Vec<TrainSample>, u32), Error> {
    let loaded = entries
        .par_iter()
        .map(|e| {
            let (mix, sources) = e.load_audio(base)?;
            let queries = text_embeddings(&e.query_texts, dim, seed)?;
            let sample = TrainSample::from_sources(&mix, &sources, queries, stft)?;
            Ok((sample, mix.sample_rate))
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let rate = loaded.first().map(|(_, r)| *r).unwrap_or(0);
    if let Some((_, r)) = loaded.iter().find(|(_, r)| *r != rate) {
        return Err(Error::Format(format!("manifest mixes sample rates {rate} and {r}")));
    }
    Ok((loaded.into_iter().map(|(s, _)| s).collect(), rate))
}

fn cmd_train(a: TrainArgs, file: &FileConfig) -> Result<(), Error> {
    require_file("--manifest", &a.manifest)?;
    let f = &file.train;
    let init = a
        .init
        .as_ref()
        .map(|p| {
            require_file("--init", p)?;
            Ok::<_, Error>(separator::load_checkpoint(p)?)
        })
        .transpose()?;
    let (stft, model) = match &init {
        Some(ckpt) => (ckpt.stft, ckpt.params.config),
        None => (stft_config(&a.stft, file)?, model_config(&a.model, file)?),
    };
    let d = TrainConfig::default();
    let optimizer = match a.optimizer.or(parse_enum("train.optimizer", f.optimizer.as_ref())?) {
        Some(OptimizerArg::Sgd) => OptimizerKind::Sgd,
        Some(OptimizerArg::Adam) | None => OptimizerKind::Adam,
    };
    let config = TrainConfig {
        batch_size: a.batch_size.or(f.batch_size).unwrap_or(d.batch_size),
        learning_rate: a.lr.or(f.lr).unwrap_or(d.learning_rate),
        epochs: a.epochs.or(f.epochs).unwrap_or(d.epochs),
        seed: a.seed.or(f.seed).unwrap_or(d.seed),
        weight_floor: a.weight_floor.or(f.weight_floor).unwrap_or(d.weight_floor),
        optimizer,
    };
    config.validate().map_err(|e| Error::Usage(e.to_string()))?;
    let split = a
        .split
        .or(parse_enum("train.split", f.split.as_ref())?)
        .unwrap_or(SplitArg::All);

    let manifest = MixtureManifest::read(&a.manifest)?;
    let entries = select_split(manifest.entries, split);
    if entries.is_empty() {
        return Err(Error::Usage(format!("no manifest entries in split {split:?}")));
    }
    let base = manifest_base(&a.manifest);
    let (samples, rate) = load_samples(&entries, &base, &stft, model.embed_dim, embed_seed(a.embed_seed, file))?;
    if let Some(ckpt) = &init {
        if ckpt.sample_rate != rate {
            return Err(Error::Format(format!(
                "checkpoint expects {} Hz audio, manifest has {rate} Hz",
                ckpt.sample_rate
            )));
        }
    }

    ensure_dir(&a.out)?;
    let log_path = a.out.join(TRAIN_LOG_FILE);
    let mut log_file = File::create(&log_path).map_err(|e| Error::io(log_path.display().to_string(), e))?;
    let mut log_error = None;
    let initial = match init {
        Some(ckpt) => ckpt.params,
        None => ModelParams::init(model, a.init_seed.or(f.init_seed).unwrap_or(0)),
    };
    let outcome = trainer::fine_tune(initial, &samples, &config, |record| {
        log::info!("epoch {} loss {:.6}", record.epoch, record.loss);
        if log_error.is_none() {
            log_error = writeln!(log_file, "{}", record.log_line()).err();
        }
    })?;
    if let Some(e) = log_error {
        return Err(Error::io(log_path.display().to_string(), e));
    }
    let ckpt_path = a.out.join(CHECKPOINT_FILE);
    separator::save_checkpoint(
        &ckpt_path,
        &Checkpoint {
            params: outcome.params,
            stft,
            sample_rate: rate,
        },
    )?;
    println!(
        "trained on {} entries: loss {:.6} -> {:.6} (best epoch {}); checkpoint {}",
        samples.len(),
        outcome.initial_loss,
        outcome.final_loss,
        outcome.best_epoch,
        ckpt_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- separate

#[derive(Deserialize)]
#[serde(untagged)]
enum EmbeddingFile {
    One(Vec<f64>),
    Many(Vec<Vec<f64>>),
}

fn read_embeddings(paths: &[PathBuf]) -> Result<Vec<QueryEmbedding>, Error> {
    let mut out = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(format!("--embedding {}", p.display()), e))?;
        let parsed: EmbeddingFile =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("--embedding {}: {e}", p.display())))?;
        let vectors = match parsed {
            EmbeddingFile::One(v) => vec![v],
            EmbeddingFile::Many(v) => v,
        };
        for v in vectors {
            out.push(QueryEmbedding::new(v)?);
        }
    }
    Ok(out)
}

fn write_outputs(out: &Path, stem: &str, clips: &[AudioClip]) -> Result<Vec<PathBuf>, Error> {
    clips
        .iter()
        .enumerate()
        .map(|(n, clip)| {
            let path = out.join(format!("{stem}_src{n}.wav"));
            dsp::write_wav(&path, clip)?;
            Ok(path)
        })
        .collect()
}

fn check_rate(ckpt: &Checkpoint, clip: &AudioClip, what: &str) -> Result<(), Error> {
    if ckpt.sample_rate != clip.sample_rate {
        return Err(Error::Format(format!(
            "{what} is {} Hz but the checkpoint expects {} Hz",
            clip.sample_rate, ckpt.sample_rate
        )));
    }
    Ok(())
}

fn cmd_separate(a: SeparateArgs, file: &FileConfig) -> Result<(), Error> {
    let ckpt = a
        .checkpoint
        .as_ref()
        .map(|p| {
            require_file("--checkpoint", p)?;
            Ok::<_, Error>(separator::load_checkpoint(p)?)
        })
        .transpose()?;
    let seed = embed_seed(a.embed_seed, file);
    ensure_dir(&a.out)?;

    if let Some(manifest_path) = &a.manifest {
        require_file("--manifest", manifest_path)?;
        let manifest = MixtureManifest::read(manifest_path)?;
        let base = manifest_base(manifest_path);
        let stft = match &ckpt {
            Some(c) => c.stft,
            None => stft_config(&a.stft, file)?,
        };
        let written = manifest
            .entries
            .par_iter()
            .map(|e| {
                let (mix, sources) = e.load_audio(&base)?;
                let spec = dsp::stft(&mix, &stft)?;
                let mag = dsp::magnitude(&spec)?;
                let masks: Vec<SeparationMask> = match &ckpt {
                    None => sources
                        .iter()
                        .map(|s| {
                            Ok(separator::ideal_binary_mask(
                                &dsp::magnitude(&dsp::stft(s, &stft)?)?,
                                &mag,
                            )?)
                        })
                        .collect::<Result<_, Error>>()?,
                    Some(c) => {
                        check_rate(c, &mix, &e.mixture_path)?;
                        let queries = text_embeddings(&e.query_texts, c.params.config.embed_dim, seed)?;
                        separator::predict_masks(&mag, &queries, &c.params)?
                    }
                };
                let clips = separator::separate_with_masks(&spec, &masks)?;
                Ok(write_outputs(&a.out, &e.id, &clips)?.len())
            })
            .collect::<Result<Vec<_>, Error>>()?;
        println!(
            "wrote {} files for {} entries to {}",
            written.iter().sum::<usize>(),
            written.len(),
            a.out.display()
        );
        return Ok(());
    }

    let input = a.input.as_ref().expect("clap requires --input without --manifest");
    require_file("--input", input)?;
    let ckpt = ckpt.expect("clap requires --checkpoint outside oracle mode");
    let mix = dsp::read_wav(input)?;
    check_rate(&ckpt, &mix, &input.display().to_string())?;
    let mut queries = text_embeddings(&a.query, ckpt.params.config.embed_dim, seed)?;
    queries.extend(read_embeddings(&a.embedding)?);
    if queries.is_empty() {
        return Err(Error::Usage("give at least one --query or --embedding".into()));
    }
    let clips = separator::separate(&mix, &queries, &ckpt.params, &ckpt.stft)?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("input");
    for p in write_outputs(&a.out, stem, &clips)? {
        println!("{}", p.display());
    }
    Ok(())
}

// ---------------------------------------------------------------- eval

/// One estimate/reference comparison in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairScore {
    pub id: String,
    pub fd: f64,
    pub kld: f64,
    pub si_sdr: f64,
    pub sdr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub fd: f64,
    pub kld: f64,
    pub si_sdr: f64,
    pub sdr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pairs: Vec<PairScore>,
    pub aggregate: Aggregate,
}

/// Scores an estimate against its reference.
pub fn score_pair(
    id: String,
    est: &AudioClip,
    reference: &AudioClip,
    cfg: &EmbedderConfig,
) -> Result<PairScore, Error> {
    let fd = metrics::frechet_distance(
        &metrics::fit_gaussian(&metrics::frame_features(est, cfg)?)?,
        &metrics::fit_gaussian(&metrics::frame_features(reference, cfg)?)?,
    )?;
    let kld = metrics::kld_binary(
        &metrics::classify_probs(reference, cfg)?,
        &metrics::classify_probs(est, cfg)?,
    )?;
    Ok(PairScore {
        id,
        fd,
        kld,
        si_sdr: metrics::si_sdr(est, reference)?,
        sdr: metrics::sdr(est, reference)?,
    })
}

pub fn aggregate(pairs: &[PairScore]) -> Aggregate {
    let n = pairs.len().max(1) as f64;
    let mean = |f: fn(&PairScore) -> f64| pairs.iter().map(f).sum::<f64>() / n;
    Aggregate {
        count: pairs.len(),
        fd: mean(|p| p.fd),
        kld: mean(|p| p.kld),
        si_sdr: mean(|p| p.si_sdr),
        sdr: mean(|p| p.sdr),
    }
}

fn cmd_eval(a: EvalArgs) -> Result<(), Error> {
    require_file("--manifest", &a.manifest)?;
    require_dir("--estimates", &a.estimates)?;
    let manifest = MixtureManifest::read(&a.manifest)?;
    let entries = select_split(manifest.entries, a.split.unwrap_or(SplitArg::All));
    let base = manifest_base(&a.manifest);
    let cfg = EmbedderConfig::default();
    let per_entry = entries
        .par_iter()
        .map(|e| {
            let (_, sources) = e.load_audio(&base)?;
            sources
                .iter()
                .enumerate()
                .map(|(n, reference)| {
                    let id = format!("{}_src{n}", e.id);
                    let est = dsp::read_wav(a.estimates.join(format!("{id}.wav")))?;
                    score_pair(id, &est, reference, &cfg)
                })
                .collect::<Result<Vec<_>, Error>>()
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let pairs: Vec<PairScore> = per_entry.into_iter().flatten().collect();
    let report = EvalReport {
        aggregate: aggregate(&pairs),
        pairs,
    };
    ensure_dir(&a.out)?;
    let path = a.out.join(REPORT_FILE);
    let text = serde_json::to_string_pretty(&report).expect("report serialises");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))?;
    let g = &report.aggregate;
    println!(
        "{} pairs: fd {:.4} kld {:.4} si_sdr {:.2} dB sdr {:.2} dB",
        g.count, g.fd, g.kld, g.si_sdr, g.sdr
    );
    Ok(())
}

// ---------------------------------------------------------------- query

fn provider_config(section: &ProviderSection, a: &ProviderArgs, model_flag: Option<&String>) -> ProviderConfig {
    let d = ProviderConfig::default();
    ProviderConfig {
        endpoint_url: a
            .endpoint
            .clone()
            .or(section.endpoint_url.clone())
            .unwrap_or(d.endpoint_url),
        model_name: model_flag
            .cloned()
            .or(section.model_name.clone())
            .unwrap_or(d.model_name),
        api_key_env_var: a
            .api_key_env
            .clone()
            .or(section.api_key_env_var.clone())
            .unwrap_or(d.api_key_env_var),
        timeout_s: a.timeout.or(section.timeout_s).unwrap_or(d.timeout_s),
        max_retries: a.retries.or(section.max_retries).unwrap_or(d.max_retries),
        prompt_template_id: section.prompt_template_id.clone().unwrap_or(d.prompt_template_id),
        retry_backoff_ms: section.retry_backoff_ms.unwrap_or(d.retry_backoff_ms),
    }
}

fn template_store(a: &ProviderArgs, section: &ProviderSection) -> TemplateStore {
    match a
        .template_dir
        .clone()
        .or(section.template_dir.clone().map(PathBuf::from))
    {
        Some(dir) => TemplateStore::with_dir(dir),
        None => TemplateStore::builtin(),
    }
}

fn check_key(cfg: &ProviderConfig) -> Result<(), QueryError> {
    if cfg.api_key_env_var.is_empty() {
        return Ok(());
    }
    match std::env::var(&cfg.api_key_env_var) {
        Ok(v) if !v.trim().is_empty() => Ok(()),
        _ => Err(QueryError::MissingApiKey(cfg.api_key_env_var.clone())),
    }
}

fn cmd_query(a: QueryArgs, file: &FileConfig) -> Result<(), Error> {
    let (d_v, d_a, query) = if a.offline {
        let (Some(scene), Some(region)) = (&a.scene, &a.region) else {
            return Err(Error::Usage("--offline needs --scene and --region text".into()));
        };
        let d_v = SceneDescription::manual(scene.clone());
        let d_a = RegionalDescription::manual(region.clone());
        let q = querygen::fallback_subtract(&d_v, &d_a);
        (d_v, d_a, q)
    } else {
        if a.scene.is_none() && a.frame.is_none() {
            return Err(Error::Usage("give --scene text or a --frame image".into()));
        }
        if a.region.is_none() && a.mask.is_none() {
            return Err(Error::Usage("give --region text or --frame with --mask".into()));
        }
        let vlm_cfg = provider_config(&file.vlm, &a.provider, a.provider.vlm_model.as_ref());
        let llm_cfg = provider_config(&file.llm, &a.provider, a.provider.llm_model.as_ref());
        let needs_vlm = a.scene.is_none() || a.region.is_none();
        if needs_vlm {
            check_key(&vlm_cfg)?;
        }
        check_key(&llm_cfg)?;
        for (flag, p) in [("--frame", &a.frame), ("--mask", &a.mask)] {
            if let Some(p) = p {
                require_file(flag, p)?;
            }
        }
        ensure_dir(&a.out)?;
        let audit = Arc::new(AuditLog::open(a.out.join(AUDIT_FILE))?);
        let vlm = ProviderClient::new(vlm_cfg)
            .audit_log(audit.clone())
            .templates(template_store(&a.provider, &file.vlm));
        let llm = ProviderClient::new(llm_cfg)
            .audit_log(audit)
            .templates(template_store(&a.provider, &file.llm));
        let d_v = match (&a.scene, &a.frame) {
            (Some(text), _) => SceneDescription::manual(text.clone()),
            (None, Some(frame)) => vlm.global_describe(frame)?,
            (None, None) => unreachable!("checked above"),
        };
        let d_a = match (&a.region, &a.frame, &a.mask) {
            (Some(text), _, _) => RegionalDescription::manual(text.clone()),
            (None, Some(frame), Some(mask)) => vlm.regional_describe(frame, mask)?,
            _ => unreachable!("checked above"),
        };
        let q = llm.textual_subtract(&d_v, &d_a)?;
        (d_v, d_a, q)
    };
    ensure_dir(&a.out)?;
    let path = a.out.join(QUERY_FILE);
    let record = json!({
        "text": query.text,
        "origin": query.origin,
        "scene": d_v,
        "region": d_a,
    });
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&record).expect("query serialises") + "\n",
    )
    .map_err(|e| Error::io(path.display().to_string(), e))?;
    println!("{}", query.text);
    Ok(())
}

// ---------------------------------------------------------------- plot

fn cmd_plot(a: PlotArgs, file: &FileConfig) -> Result<(), Error> {
    let stft = stft_config(&a.stft, file)?;
    let mut stems = HashSet::new();
    for input in &a.input {
        require_file("--input", input)?;
        let stem = input
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("input")
            .to_string();
        if !stems.insert(stem.clone()) {
            return Err(Error::Usage(format!("--input: two files share the name {stem}")));
        }
    }
    ensure_dir(&a.out)?;
    for input in &a.input {
        let clip = dsp::read_wav(input)?;
        let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("input");
        let path = a.out.join(format!("{stem}.png"));
        let (w, h) = plot::plot_clip(&clip, &stft, &path)?;
        println!("{} ({w}x{h})", path.display());
    }
    Ok(())
}
