use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "evmcnn", version, about = "Contactless heart-rate estimation from facial video")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Worker threads for parallel stages (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic clips with a known pulse and a manifest.
    Synth(SynthArgs),
    /// Cut every manifest entry into windows and write feature images.
    Extract(ExtractArgs),
    /// Train a model on extracted feature images.
    Train(TrainArgs),
    /// Predict per-second heart rate for every video.
    Predict(PredictArgs),
    /// Score per-second predictions under the evaluation protocols.
    Eval(EvalArgs),
    /// Measure feature-extraction and inference throughput.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct FeatureArgs {
    /// Override the frame rate of every manifest entry.
    #[arg(long)]
    pub fps: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub pyramid_level: usize,
    #[arg(long, default_value_t = 0.75)]
    pub f_low: f64,
    #[arg(long, default_value_t = 4.0)]
    pub f_high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FrameFormatArg {
    Float,
    Png,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub clips: usize,
    #[arg(long, default_value_t = 60.0)]
    pub hr_min: f64,
    #[arg(long, default_value_t = 120.0)]
    pub hr_max: f64,
    /// Clip length in seconds.
    #[arg(long, default_value_t = 30)]
    pub duration: usize,
    #[arg(long, default_value_t = 25)]
    pub fps: usize,
    /// Ground-truth sampling rate in Hz.
    #[arg(long, default_value_t = 1000)]
    pub gt_rate: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-pixel Gaussian noise sigma, 0–255 units.
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, value_enum, default_value_t = FrameFormatArg::Float)]
    pub format: FrameFormatArg,
    /// Face drift in px/s.
    #[arg(long, default_value_t = 0.0)]
    pub drift_x: f64,
    #[arg(long, default_value_t = 0.0)]
    pub drift_y: f64,
    /// Switch every clip to `--step-to` bpm at this time (s).
    #[arg(long, requires = "step_to")]
    pub step_at: Option<f64>,
    #[arg(long, requires = "step_at")]
    pub step_to: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub features: FeatureArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitBy {
    /// Random feature images, as in the original protocol.
    Window,
    /// Whole videos, so no recording contributes to both sides.
    Video,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// `labels.csv` written by `extract`.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 15_000)]
    pub iters: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// Iterations between ×0.1 learning-rate drops.
    #[arg(long, default_value_t = 5_000)]
    pub lr_step: usize,
    #[arg(long, default_value_t = 0.125)]
    pub test_fraction: f64,
    #[arg(long, value_enum, default_value_t = SplitBy::Window)]
    pub split_by: SplitBy,
    /// Share of the training part held out for model selection.
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Predict from extracted feature images listed in a labels file.
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    pub labels: Option<PathBuf>,
    /// Predict straight from recordings.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub features: FeatureArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Directory of per-video prediction CSVs.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Short-time window lengths in seconds.
    #[arg(long, value_delimiter = ',', default_value = "4,6,8")]
    pub window: Vec<usize>,
    /// Share of videos, by ground-truth variation, used for short-time scoring.
    #[arg(long, default_value_t = 0.2)]
    pub short_fraction: f64,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub features: FeatureArgs,
}
