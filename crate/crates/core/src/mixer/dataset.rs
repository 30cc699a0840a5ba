//! Directory-to-dataset builder and the JSON Lines manifest.
//!
//! Layout under the output directory:
//!
//! ```text
//! manifest.jsonl
//! audio/mix_00000.wav
//! audio/mix_00000_src0.wav   foreground
//! audio/mix_00000_src1.wav   background
//! ```
//!
//! Manifest paths are relative to the manifest's directory. Every file is
//! written to a temporary name and renamed into place.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mix_clips, MixerError};
use crate::dsp::{self, AudioClip};
use crate::hash::fnv1a64;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
const AUDIO_DIR: &str = "audio";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum Pairing {
    /// Every foreground with every background, foreground-major.
    Exhaustive,
    /// `count` pairs drawn uniformly with replacement.
    Random { count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum SnrPolicy {
    Fixed { db: f64 },
    Uniform { min_db: f64, max_db: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub pairing: Pairing,
    pub seed: u64,
    pub target_rate: u32,
    pub duration_s: f64,
    pub snr: SnrPolicy,
    /// Fraction of entries tagged `val`, chosen by hashing the id.
    pub val_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            pairing: Pairing::Exhaustive,
            seed: 0,
            target_rate: 16_000,
            duration_s: 4.0,
            snr: SnrPolicy::Uniform {
                min_db: -5.0,
                max_db: 5.0,
            },
            val_fraction: 0.1,
        }
    }
}

impl DatasetConfig {
    fn validate(&self) -> Result<(), MixerError> {
        let bad = |m: String| Err(MixerError::InvalidConfig(m));
        if self.target_rate == 0 {
            return bad("target_rate must be positive".into());
        }
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return bad(format!("duration_s must be positive, got {}", self.duration_s));
        }
        if !(0.0..=1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must be in [0, 1], got {}", self.val_fraction));
        }
        match self.snr {
            SnrPolicy::Fixed { db } if !db.is_finite() => bad("snr must be finite".into()),
            SnrPolicy::Uniform { min_db, max_db }
                if !(min_db <= max_db) || !max_db.is_finite() || !min_db.is_finite() =>
            {
                bad(format!("invalid snr range [{min_db}, {max_db}]"))
            }
            _ => match self.pairing {
                Pairing::Random { count: 0 } => bad("random pairing needs count >= 1".into()),
                _ => Ok(()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub mixture_path: String,
    pub source_paths: Vec<String>,
    pub query_texts: Vec<String>,
    pub snr_db: f64,
    pub seed: u64,
    pub split_tag: String,
}

impl ManifestEntry {
    /// Reads the mixture and its sources relative to `base`.
    pub fn load_audio(&self, base: &Path) -> Result<(AudioClip, Vec<AudioClip>), MixerError> {
        let mixture = dsp::read_wav(base.join(&self.mixture_path))?;
        let sources = self
            .source_paths
            .iter()
            .map(|p| dsp::read_wav(base.join(p)).map_err(MixerError::from))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((mixture, sources))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MixtureManifest {
    pub entries: Vec<ManifestEntry>,
}

impl MixtureManifest {
    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("manifest entries serialise") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, MixerError> {
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| MixerError::Manifest(format!("line {}: {e}", i + 1))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { entries })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, MixerError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| MixerError::io(path, e))?;
        Self::from_jsonl(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), MixerError> {
        write_atomic(path.as_ref(), self.to_jsonl().as_bytes())
    }

    /// Checks source counts, id uniqueness and that files exist under `base`.
    pub fn validate(&self, base: &Path) -> Result<(), MixerError> {
        let mut ids = HashSet::new();
        for e in &self.entries {
            if !ids.insert(e.id.as_str()) {
                return Err(MixerError::Manifest(format!("duplicate id {}", e.id)));
            }
            if e.source_paths.len() < 2 || e.source_paths.len() != e.query_texts.len() {
                return Err(MixerError::Manifest(format!(
                    "{}: {} sources and {} queries",
                    e.id,
                    e.source_paths.len(),
                    e.query_texts.len()
                )));
            }
            for p in std::iter::once(&e.mixture_path).chain(&e.source_paths) {
                if !base.join(p).is_file() {
                    return Err(MixerError::Manifest(format!("{}: missing file {p}", e.id)));
                }
            }
        }
        Ok(())
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), MixerError> {
    let tmp = tmp_path(path);
    std::fs::write(&tmp, bytes).map_err(|e| MixerError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| MixerError::io(path, e))
}

fn write_wav_atomic(path: &Path, pcm: &[i16], rate: u32) -> Result<(), MixerError> {
    let tmp = tmp_path(path);
    dsp::write_wav_i16(&tmp, pcm, rate)?;
    std::fs::rename(&tmp, path).map_err(|e| MixerError::io(path, e))
}

/// Sorted `.wav` files directly inside `dir`.
pub(crate) fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>, MixerError> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| MixerError::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
        })
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(MixerError::EmptyDirectory(dir.display().to_string()));
    }
    Ok(out)
}

/// Query text for a source file: a sibling `<stem>.txt` when present,
/// otherwise the stem with separators turned into spaces and numeric tokens
/// dropped.
pub fn query_text_for(path: &Path) -> String {
    if let Ok(text) = std::fs::read_to_string(path.with_extension("txt")) {
        let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
        if !text.is_empty() {
            return text;
        }
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    let words: Vec<&str> = stem
        .split(['_', '-', ' '])
        .filter(|t| !t.is_empty() && !t.chars().all(|c| c.is_ascii_digit()))
        .collect();
    if words.is_empty() {
        stem.to_string()
    } else {
        words.join(" ")
    }
}

fn split_tag(id: &str, seed: u64, val_fraction: f64) -> &'static str {
    let bucket = fnv1a64(seed, id.as_bytes()) % 10_000;
    if (bucket as f64) < val_fraction * 10_000.0 {
        "val"
    } else {
        "train"
    }
}

struct Plan {
    id: String,
    fg: usize,
    bg: usize,
    snr_db: f64,
    seed: u64,
}

fn plan(fg: usize, bg: usize, config: &DatasetConfig) -> Vec<Plan> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pairs: Vec<(usize, usize)> = match config.pairing {
        Pairing::Exhaustive => (0..fg).flat_map(|f| (0..bg).map(move |b| (f, b))).collect(),
        Pairing::Random { count } => (0..count)
            .map(|_| (rng.random_range(0..fg), rng.random_range(0..bg)))
            .collect(),
    };
    pairs
        .into_iter()
        .enumerate()
        .map(|(i, (f, b))| {
            let snr_db = match config.snr {
                SnrPolicy::Fixed { db } => db,
                SnrPolicy::Uniform { min_db, max_db } if min_db == max_db => min_db,
                SnrPolicy::Uniform { min_db, max_db } => rng.random_range(min_db..max_db),
            };
            Plan {
                id: format!("mix_{i:05}"),
                fg: f,
                bg: b,
                snr_db,
                seed: rng.random(),
            }
        })
        .collect()
}

/// Mixes every planned pair and writes audio plus `manifest.jsonl` under
/// `out_dir`. Entries are produced in parallel and assembled in plan order.
pub fn build_dataset(
    fg_dir: &Path,
    bg_dir: &Path,
    out_dir: &Path,
    config: &DatasetConfig,
) -> Result<MixtureManifest, MixerError> {
    config.validate()?;
    let fgs = list_wavs(fg_dir)?;
    let bgs = list_wavs(bg_dir)?;
    let audio_dir = out_dir.join(AUDIO_DIR);
    std::fs::create_dir_all(&audio_dir).map_err(|e| MixerError::io(&audio_dir, e))?;

    let fg_clips = fgs.iter().map(dsp::read_wav).collect::<Result<Vec<_>, _>>()?;
    let bg_clips = bgs.iter().map(dsp::read_wav).collect::<Result<Vec<_>, _>>()?;
    let fg_text: Vec<String> = fgs.iter().map(|p| query_text_for(p)).collect();
    let bg_text: Vec<String> = bgs.iter().map(|p| query_text_for(p)).collect();

    let entries = plan(fgs.len(), bgs.len(), config)
        .par_iter()
        .map(|p| {
            let out = mix_clips(
                &fg_clips[p.fg],
                &bg_clips[p.bg],
                p.snr_db,
                config.target_rate,
                config.duration_s,
                p.seed,
            )?;
            let mixture_path = format!("{AUDIO_DIR}/{}.wav", p.id);
            write_wav_atomic(&out_dir.join(&mixture_path), &out.mixture_pcm, config.target_rate)?;
            let source_paths = out
                .sources_pcm
                .iter()
                .enumerate()
                .map(|(n, pcm)| {
                    let rel = format!("{AUDIO_DIR}/{}_src{n}.wav", p.id);
                    write_wav_atomic(&out_dir.join(&rel), pcm, config.target_rate)?;
                    Ok(rel)
                })
                .collect::<Result<Vec<_>, MixerError>>()?;
            Ok(ManifestEntry {
                split_tag: split_tag(&p.id, config.seed, config.val_fraction).to_string(),
                id: p.id.clone(),
                mixture_path,
                source_paths,
                query_texts: vec![fg_text[p.fg].clone(), bg_text[p.bg].clone()],
                snr_db: p.snr_db,
                seed: p.seed,
            })
        })
        .collect::<Result<Vec<_>, MixerError>>()?;

    let manifest = MixtureManifest { entries };
    manifest.write(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
