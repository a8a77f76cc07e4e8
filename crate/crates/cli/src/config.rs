//! Optional TOML configuration file. Every key is optional; explicit
//! command-line flags win over the file, and the file wins over defaults.
//!
//! ```toml
//! [augment]
//! gain_min = 0.1
//! seed = 7
//!
//! [features]
//! kind = "gfcc"
//! n_gfcc = 40
//!
//! [model]
//! conv_channels = [48, 48]
//!
//! [train]
//! folds = 5
//! epochs = 50
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use vehicle_acoustics::features::{FeatureKind, GfccCompression};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub augment: AugmentSection,
    pub features: FeaturesSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub serve: ServeSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub gain_min: Option<f64>,
    pub gain_max: Option<f64>,
    pub noise_min: Option<f64>,
    pub noise_max: Option<f64>,
    pub stretch_min: Option<f64>,
    pub stretch_max: Option<f64>,
    pub seed: Option<u64>,
    pub keep_going: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesSection {
    pub kind: Option<String>,
    pub pre_emphasis: Option<f64>,
    pub n_mels: Option<usize>,
    pub n_mfcc: Option<usize>,
    pub n_gammatone: Option<usize>,
    pub n_gfcc: Option<usize>,
    pub gammatone_f_min: Option<f64>,
    pub gfcc_compression: Option<GfccCompression>,
    pub cache_dir: Option<PathBuf>,
}

impl FeaturesSection {
    pub fn kind(&self) -> Result<Option<FeatureKind>, CliError> {
        self.kind
            .as_deref()
            .map(|k| k.parse().map_err(|e| CliError::Usage(format!("config file: {e}"))))
            .transpose()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub conv_channels: Option<Vec<usize>>,
    pub kernel_size: Option<usize>,
    pub global_hidden: Option<usize>,
    pub head_hidden: Option<usize>,
    pub dropout: Option<f64>,
    pub batch_norm: Option<bool>,
    pub rng_seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub folds: Option<usize>,
    pub epochs: Option<usize>,
    pub early_stop_patience: Option<usize>,
    pub lr_initial: Option<f64>,
    pub lr_reduce_patience: Option<usize>,
    pub lr_reduce_factor: Option<f64>,
    pub lr_min: Option<f64>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub bind: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load_optional(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}
