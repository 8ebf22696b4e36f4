//! Command-line entry point: `amodalcs <subcommand>`.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{manifest_path, tensor_path, RunManifest};

/// Exit code for a clean run.
pub const EXIT_OK: i32 = 0;
/// Exit code when at least one frame failed.
pub const EXIT_FRAME_ERRORS: i32 = 1;
/// Exit code for invalid arguments or configuration.
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "amodalcs", version, about = "Copy-paste amodal segmentation dataset tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the occluder bank from the instances of a split.
    Extract(ExtractArgs),
    /// Compose amodal frames for every frame of a split.
    Generate(GenerateArgs),
    /// Score predictions against generated ground truth.
    Evaluate(EvaluateArgs),
    /// Class frequencies, location priors and instance census.
    Stats(StatsArgs),
    /// Encode amodal label maps as groupwise tensors.
    Encode(EncodeArgs),
    /// Decode groupwise tensors back to amodal label maps.
    Decode(DecodeArgs),
    /// Write a small synthetic dataset in Cityscapes layout.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Cityscapes root (containing leftImg8bit/ and gtFine/).
    #[arg(long)]
    pub root: PathBuf,
    /// Split list, one frame id per line.
    #[arg(long)]
    pub split: PathBuf,
    /// Output bank directory.
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub min_width: usize,
    #[arg(long, default_value_t = 20)]
    pub min_height: usize,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Master seed; drawn at random and recorded when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 0.1)]
    pub max_occlusion_ratio: f64,
    #[arg(long, default_value_t = 5)]
    pub blend_kernel: usize,
    #[arg(long, default_value_t = 1.0)]
    pub blend_sigma: f64,
    #[arg(long, default_value_t = 50)]
    pub max_place_attempts: u32,
    #[arg(long, default_value_t = 10)]
    pub max_patch_redraws: u32,
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredFormat {
    /// `labels_visible/` and `labels_occluded/` PNGs.
    Png,
    /// `<stem>.agwt` groupwise tensors.
    Tensor,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Generated ground truth root.
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, value_enum, default_value_t = PredFormat::Png)]
    pub format: PredFormat,
    /// `k4`, `k3` or a scheme JSON file (tensor format only).
    #[arg(long, default_value = "k4")]
    pub scheme: String,
    /// Average over all 19 classes instead of the classes present.
    #[arg(long)]
    pub strict_mean: bool,
    /// Occluder bank; with it, the invisible score is restricted to the
    /// recorded occluder footprints.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Manifest directory (defaults to `<root>/manifests`).
    #[arg(long)]
    pub manifests: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Generated dataset root.
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    /// Original Cityscapes root, for comparison against the source split.
    #[arg(long)]
    pub original_root: Option<PathBuf>,
    /// Occluder bank, for the instance census.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Classes for location priors, by name or train id.
    #[arg(long, value_delimiter = ',', default_value = "person")]
    pub prior_class: Vec<String>,
    /// Grid reduction of location priors.
    #[arg(long, default_value_t = 8)]
    pub downsample: usize,
    /// Full-resolution location priors.
    #[arg(long)]
    pub full_res: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Generated dataset root.
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, default_value = "k4")]
    pub scheme: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Directory of `<stem>.agwt` tensors.
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, default_value = "k4")]
    pub scheme: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    /// Cityscapes subset directory and split list name.
    #[arg(long, default_value = "train")]
    pub subset: String,
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Extract(a) => commands::extract(&a),
        Command::Generate(a) => commands::generate(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Stats(a) => commands::stats(&a),
        Command::Encode(a) => commands::encode(&a),
        Command::Decode(a) => commands::decode(&a),
        Command::Synth(a) => commands::synth(&a),
    };
    match result {
        Ok(0) => EXIT_OK,
        Ok(failed) => {
            eprintln!("{failed} frame(s) failed");
            EXIT_FRAME_ERRORS
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}
