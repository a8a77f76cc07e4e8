//! Local (frame-wise) and global (whole-signal) audio features.

pub mod blob;
pub mod dct;
pub mod gammatone;
pub mod global;
pub mod mel;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, CANONICAL_SAMPLE_RATE, CANONICAL_SECONDS, DEFAULT_PRE_EMPHASIS};
use crate::dsp::StftConfig;
use crate::error::{Error, Result};

pub use gammatone::{gfcc, gfcc_with, gammatone_filterbank, gammatone_impulse_response, GammatoneParams, GfccCompression};
pub use global::{global_feature_vector, magnitude_spectrum, GlobalFeatureVector, GLOBAL_DIM};
pub use mel::{mel_filterbank, mel_spectrogram, mfcc};

/// Floor added before the mel log and applied to gammatone energies.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    MelSpectrogram,
    Mfcc,
    Gfcc,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 3] = [FeatureKind::MelSpectrogram, FeatureKind::Mfcc, FeatureKind::Gfcc];

    /// Short name used on the command line.
    pub fn short_name(self) -> &'static str {
        match self {
            FeatureKind::MelSpectrogram => "melspec",
            FeatureKind::Mfcc => "mfcc",
            FeatureKind::Gfcc => "gfcc",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "melspec" | "mel_spectrogram" => Ok(FeatureKind::MelSpectrogram),
            "mfcc" => Ok(FeatureKind::Mfcc),
            "gfcc" => Ok(FeatureKind::Gfcc),
            other => Err(Error::InvalidConfig(format!("unknown feature kind `{other}`"))),
        }
    }
}

/// Dense filter matrix, row-major `n_filters x n_bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    n_filters: usize,
    n_bins: usize,
    weights: Vec<f64>,
}

impl FilterBank {
    pub(crate) fn new(n_filters: usize, n_bins: usize, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), n_filters * n_bins);
        Self {
            n_filters,
            n_bins,
            weights,
        }
    }

    pub fn n_filters(&self) -> usize {
        self.n_filters
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    /// Band energies of one power-spectrum frame.
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        debug_assert_eq!(power.len(), self.n_bins);
        self.weights
            .chunks_exact(self.n_bins)
            .map(|row| row.iter().zip(power).map(|(w, p)| w * p).sum())
            .collect()
    }
}

pub(crate) fn check_distinct_center_bins(centers: &[f64], fft_size: usize, sample_rate: u32, what: &str) -> Result<()> {
    let bin_of = |f: f64| (f * fft_size as f64 / f64::from(sample_rate)).round() as i64;
    for (i, pair) in centers.windows(2).enumerate() {
        if bin_of(pair[0]) == bin_of(pair[1]) {
            return Err(Error::DegenerateBand(format!(
                "{what} centers {i} and {} ({:.1} Hz, {:.1} Hz) share FFT bin {}",
                i + 1,
                pair[0],
                pair[1],
                bin_of(pair[0])
            )));
        }
    }
    Ok(())
}

/// Frames x coefficients, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFeatureMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    frame_hop: usize,
    kind: FeatureKind,
}

impl LocalFeatureMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, frame_hop: usize, kind: FeatureKind) -> Self {
        assert_eq!(values.len(), rows * cols, "feature matrix size");
        Self {
            rows,
            cols,
            values,
            frame_hop,
            kind,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frame_hop(&self) -> usize {
        self.frame_hop
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.cols)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Everything needed to turn a clip into model inputs. Stored in checkpoints
/// so prediction uses the same pipeline as training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    pub kind: FeatureKind,
    pub sample_rate: u32,
    pub seconds: f64,
    pub pre_emphasis: f64,
    pub stft: StftConfig,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub n_gammatone: usize,
    pub n_gfcc: usize,
    pub gammatone_f_min: f64,
    pub gfcc_compression: GfccCompression,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            kind: FeatureKind::Gfcc,
            sample_rate: CANONICAL_SAMPLE_RATE,
            seconds: CANONICAL_SECONDS,
            pre_emphasis: DEFAULT_PRE_EMPHASIS,
            stft: StftConfig::default(),
            n_mels: 128,
            n_mfcc: 40,
            n_gammatone: 64,
            n_gfcc: 40,
            gammatone_f_min: gammatone::DEFAULT_F_MIN,
            gfcc_compression: GfccCompression::Log,
        }
    }
}

impl FeatureConfig {
    pub fn with_kind(kind: FeatureKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn clip_len(&self) -> usize {
        (f64::from(self.sample_rate) * self.seconds).round() as usize
    }

    /// `(frames, coefficients)` of the local matrix.
    pub fn local_shape(&self) -> (usize, usize) {
        let cols = match self.kind {
            FeatureKind::MelSpectrogram => self.n_mels,
            FeatureKind::Mfcc => self.n_mfcc,
            FeatureKind::Gfcc => self.n_gfcc,
        };
        (self.stft.frame_count(self.clip_len()), cols)
    }

    /// Stable digest of the configuration, used as a cache key component.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("feature config serializes");
        let hash = Sha256::digest(json);
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// The pair of network inputs for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub local: LocalFeatureMatrix,
    pub global: GlobalFeatureVector,
}

impl FeatureSet {
    /// Rounds every value to `f32`, the precision of the feature cache, so
    /// that cached and freshly computed features are indistinguishable.
    pub fn to_cache_precision(&self) -> Self {
        let local = LocalFeatureMatrix::new(
            self.local.rows,
            self.local.cols,
            self.local.values.iter().map(|&v| f64::from(v as f32)).collect(),
            self.local.frame_hop,
            self.local.kind,
        );
        let mut global = self.global;
        for v in &mut global.values {
            *v = f64::from(*v as f32);
        }
        Self { local, global }
    }
}

/// Feature pipeline with filterbanks and DCT precomputed for one config.
/// Immutable, so one instance can serve many threads.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    config: FeatureConfig,
    bank: FilterBank,
    dct: Option<dct::DctBasis>,
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig) -> Result<Self> {
        config.stft.validate()?;
        if !(0.0..1.0).contains(&config.pre_emphasis) {
            return Err(Error::InvalidConfig(format!(
                "pre-emphasis {} outside [0, 1)",
                config.pre_emphasis
            )));
        }
        let nyquist = f64::from(config.sample_rate) / 2.0;
        let (bank, dct) = match config.kind {
            FeatureKind::MelSpectrogram => (
                mel_filterbank(config.stft.fft_size, config.sample_rate, config.n_mels, 0.0, nyquist)?,
                None,
            ),
            FeatureKind::Mfcc => {
                if config.n_mfcc == 0 || config.n_mfcc > config.n_mels {
                    return Err(Error::InvalidConfig("MFCC count must be in 1..=n_mels".into()));
                }
                (
                    mel_filterbank(config.stft.fft_size, config.sample_rate, config.n_mels, 0.0, nyquist)?,
                    Some(dct::DctBasis::new(config.n_mels)),
                )
            }
            FeatureKind::Gfcc => {
                if config.n_gfcc == 0 || config.n_gfcc > config.n_gammatone {
                    return Err(Error::InvalidConfig("GFCC count must be in 1..=n_gammatone".into()));
                }
                (
                    gammatone_filterbank(
                        config.stft.fft_size,
                        config.sample_rate,
                        config.n_gammatone,
                        config.gammatone_f_min,
                    )?,
                    Some(dct::DctBasis::new(config.n_gammatone)),
                )
            }
        };
        Ok(Self { config, bank, dct })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    /// Canonicalizes and pre-emphasizes the clip, then computes both inputs.
    pub fn extract(&self, clip: &AudioClip) -> Result<FeatureSet> {
        let clip = clip
            .normalize(self.config.sample_rate, self.config.seconds)?
            .pre_emphasis(self.config.pre_emphasis);
        let local = self.local_features(&clip)?;
        let global = global_feature_vector(&magnitude_spectrum(&clip))?;
        Ok(FeatureSet { local, global })
    }

    /// Local matrix of an already-prepared clip.
    pub fn local_features(&self, clip: &AudioClip) -> Result<LocalFeatureMatrix> {
        let cfg = &self.config.stft;
        match self.config.kind {
            FeatureKind::MelSpectrogram => mel::log_mel_with(clip, cfg, &self.bank),
            FeatureKind::Mfcc => {
                let log_mel = mel::log_mel_with(clip, cfg, &self.bank)?;
                let dct = self.dct.as_ref().expect("MFCC extractor has a DCT");
                Ok(mel::cepstrum(&log_mel, dct, self.config.n_mfcc, FeatureKind::Mfcc))
            }
            FeatureKind::Gfcc => gammatone::gfcc_from_bank(
                clip,
                cfg,
                &self.bank,
                self.dct.as_ref().expect("GFCC extractor has a DCT"),
                self.config.n_gfcc,
                self.config.gfcc_compression,
            ),
        }
    }
}
