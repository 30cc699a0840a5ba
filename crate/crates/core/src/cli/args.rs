use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "qsep", version, about = "Text-queried audio source separation toolkit")]
pub struct Cli {
    /// TOML file with defaults; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for per-entry work; output order is unaffected.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a mixture dataset from foreground and background directories.
    Mix(MixArgs),
    /// Train a separator on a mixture manifest and write a checkpoint.
    Train(TrainArgs),
    /// Separate audio with a checkpoint, or with oracle masks.
    Separate(SeparateArgs),
    /// Score separated estimates against manifest references.
    Eval(EvalArgs),
    /// Produce a text query from scene and region descriptions.
    Query(QueryArgs),
    /// Render log-magnitude spectrograms as PNG images.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PairsArg {
    Exhaustive,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Unet,
    Pointwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    All,
}

#[derive(Debug, Args)]
pub struct StftArgs {
    /// STFT window length in samples.
    #[arg(long)]
    pub window: Option<usize>,
    /// STFT hop in samples.
    #[arg(long)]
    pub hop: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    #[arg(long)]
    pub fg: PathBuf,
    #[arg(long)]
    pub bg: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub pairs: Option<PairsArg>,
    /// Number of entries for random pairing.
    #[arg(long)]
    pub count: Option<usize>,
    /// Fixed SNR for every entry; overrides the range.
    #[arg(long, allow_negative_numbers = true)]
    pub snr_db: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub snr_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub snr_max: Option<f64>,
    #[arg(long)]
    pub rate: Option<u32>,
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum)]
    pub arch: Option<ArchArg>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    /// Warp onto this many log-frequency bins before the network.
    #[arg(long)]
    pub log_freq_bins: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint instead of a fresh initialisation.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Seeds the per-epoch shuffle.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seeds the weight initialisation.
    #[arg(long)]
    pub init_seed: Option<u64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long)]
    pub weight_floor: Option<f64>,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    /// Seed of the text-to-embedding hasher.
    #[arg(long)]
    pub embed_seed: Option<u64>,
    #[command(flatten)]
    pub stft: StftArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct SeparateArgs {
    #[arg(long, required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Mixture to separate (single-file mode).
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    pub input: Option<PathBuf>,
    /// Separate every manifest entry using its query texts.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Text query; repeat for several outputs.
    #[arg(long, conflicts_with_all = ["embedding", "manifest"])]
    pub query: Vec<String>,
    /// JSON file holding one embedding vector or a list of them.
    #[arg(long, conflicts_with = "manifest")]
    pub embedding: Vec<PathBuf>,
    /// Use ideal binary masks from the manifest sources instead of a model.
    #[arg(long, requires = "manifest", conflicts_with = "checkpoint")]
    pub oracle: bool,
    #[arg(long)]
    pub embed_seed: Option<u64>,
    #[command(flatten)]
    pub stft: StftArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory holding `<id>_src<n>.wav` estimates.
    #[arg(long)]
    pub estimates: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
}

#[derive(Debug, Args)]
pub struct ProviderArgs {
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Model used for the scene and region descriptions.
    #[arg(long)]
    pub vlm_model: Option<String>,
    /// Model used for the subtraction step.
    #[arg(long)]
    pub llm_model: Option<String>,
    /// Environment variable that holds the API key.
    #[arg(long)]
    pub api_key_env: Option<String>,
    #[arg(long)]
    pub timeout: Option<f64>,
    #[arg(long)]
    pub retries: Option<u32>,
    /// Directory whose `<id>.txt` files override the built-in templates.
    #[arg(long)]
    pub template_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Scene description text (skips the scene request).
    #[arg(long, conflicts_with = "frame")]
    pub scene: Option<String>,
    /// Region description text (skips the region request).
    #[arg(long, conflicts_with = "mask")]
    pub region: Option<String>,
    #[arg(long)]
    pub frame: Option<PathBuf>,
    #[arg(long, requires = "frame")]
    pub mask: Option<PathBuf>,
    /// Use the deterministic token subtraction; never contacts a provider.
    #[arg(long)]
    pub offline: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// WAV files to render, e.g. mixture, estimate and reference.
    #[arg(long, required = true)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub stft: StftArgs,
}
