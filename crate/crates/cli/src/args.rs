use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vehicle_acoustics::features::FeatureKind;

#[derive(Debug, Parser)]
#[command(name = "vacoustic", version, about = "Classify passing vehicles from roadside audio")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Worker threads for extraction and training (default: logical cores).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,

    /// TOML file with default settings; explicit flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Expand a corpus with gain, noise and time-stretch copies of every original.
    Augment(AugmentArgs),
    /// Extract features for every manifest entry into the cache.
    Extract(ExtractArgs),
    /// Cross-validate the classifier and write checkpoints and reports.
    Train(TrainArgs),
    /// Classify one WAV file.
    Predict(PredictArgs),
    /// Serve predictions over HTTP.
    Serve(ServeArgs),
    /// Generate a synthetic four-class corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FeatureArg {
    Melspec,
    Mfcc,
    Gfcc,
}

impl From<FeatureArg> for FeatureKind {
    fn from(f: FeatureArg) -> Self {
        match f {
            FeatureArg::Melspec => FeatureKind::MelSpectrogram,
            FeatureArg::Mfcc => FeatureKind::Mfcc,
            FeatureArg::Gfcc => FeatureKind::Gfcc,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct AugmentArgs {
    /// Manifest of original recordings.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory for augmented WAVs and the expanded manifest.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub gain_min: Option<f64>,
    #[arg(long)]
    pub gain_max: Option<f64>,
    /// Lower bound of the noise rate.
    #[arg(long)]
    pub noise_min: Option<f64>,
    #[arg(long)]
    pub noise_max: Option<f64>,
    #[arg(long)]
    pub stretch_min: Option<f64>,
    #[arg(long)]
    pub stretch_max: Option<f64>,
    /// Exit successfully even if some recordings fail.
    #[arg(long)]
    pub keep_going: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum)]
    pub features: Option<FeatureArg>,
    /// Feature cache directory (default: `feature-cache` next to the manifest).
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Number of cross-validation folds [default: 5].
    #[arg(long)]
    pub folds: Option<usize>,
    /// Local feature kind [default: gfcc].
    #[arg(long, value_enum)]
    pub features: Option<FeatureArg>,
    /// Checkpoint path for the best fold; per-fold checkpoints and reports
    /// are written next to it.
    #[arg(long, default_value = "model.ckpt")]
    pub out: PathBuf,
    /// Reuse extracted features from this directory.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_min: Option<f64>,
    #[arg(long)]
    pub lr_factor: Option<f64>,
    #[arg(long)]
    pub lr_patience: Option<usize>,
    #[arg(long)]
    pub early_stop_patience: Option<usize>,
    /// Seed for fold assignment, shuffling and initialization.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub batch_norm: bool,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub wav: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Listen address [default: 127.0.0.1:8080].
    #[arg(long)]
    pub bind: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
