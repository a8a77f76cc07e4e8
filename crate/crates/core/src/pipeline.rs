//! End-to-end inference: WAV bytes in, class probabilities out.

use std::path::Path;

use crate::audio::{decode_wav_bytes, AudioClip};
use crate::dataset::{Label, N_CLASSES};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureExtractor};
use crate::nn::{load_checkpoint, Model, Prediction};

/// Stores the feature configuration in the model so inference can rebuild
/// the exact front end used in training.
pub fn attach_feature_config(model: &mut Model, cfg: &FeatureConfig) {
    model.set_metadata(serde_json::to_string(cfg).expect("feature config serializes"));
}

/// Reads the feature configuration stored by [`attach_feature_config`].
/// Models without one fall back to the default configuration.
pub fn feature_config_of(model: &Model) -> Result<FeatureConfig> {
    if model.metadata().is_empty() {
        return Ok(FeatureConfig::default());
    }
    serde_json::from_str(model.metadata())
        .map_err(|e| Error::VersionUnsupported(format!("checkpoint carries an unreadable feature config: {e}")))
}

/// A frozen model paired with its feature extractor. Safe to share across
/// threads.
#[derive(Debug, Clone)]
pub struct Classifier {
    model: Model,
    extractor: FeatureExtractor,
}

impl Classifier {
    pub fn new(model: Model) -> Result<Self> {
        let cfg = feature_config_of(&model)?;
        let (rows, cols) = cfg.local_shape();
        let mc = model.config();
        if (mc.local_frames, mc.local_coeffs) != (rows, cols) {
            return Err(Error::ShapeMismatch(format!(
                "features are {rows}x{cols} but the model expects {}x{}",
                mc.local_frames, mc.local_coeffs
            )));
        }
        if mc.n_classes != N_CLASSES {
            return Err(Error::ShapeMismatch(format!("model has {} classes, expected {N_CLASSES}", mc.n_classes)));
        }
        Ok(Self {
            model,
            extractor: FeatureExtractor::new(cfg)?,
        })
    }

    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        Self::new(load_checkpoint(path)?)
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn feature_config(&self) -> &FeatureConfig {
        self.extractor.config()
    }

    /// Features are rounded to `f32` first, matching what training saw.
    pub fn classify_clip(&self, clip: &AudioClip) -> Result<Prediction> {
        let set = self.extractor.extract(clip)?.to_cache_precision();
        self.model.forward(&set.local, &set.global)
    }

    pub fn classify_wav_bytes(&self, bytes: &[u8]) -> Result<Prediction> {
        self.classify_clip(&decode_wav_bytes(bytes)?)
    }

    pub fn classify_wav(&self, path: &Path) -> Result<Prediction> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.classify_wav_bytes(&bytes)
    }
}

/// Class name for a model output index.
pub fn label_name(index: usize) -> &'static str {
    Label::from_index(index).map_or("unknown", Label::as_str)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::encode_wav_bytes;
    use crate::features::FeatureKind;
    use crate::nn::ModelConfig;

    fn model_for(cfg: &FeatureConfig) -> Model {
        let (rows, cols) = cfg.local_shape();
        let mut m = Model::new(ModelConfig::for_local_shape(rows, cols)).unwrap();
        attach_feature_config(&mut m, cfg);
        m
    }

    #[test]
    fn classifies_wav_bytes() {
        let cfg = FeatureConfig::with_kind(FeatureKind::Mfcc);
        let c = Classifier::new(model_for(&cfg)).unwrap();
        assert_eq!(c.feature_config(), &cfg);
        let clip = AudioClip::new((0..22_050).map(|i| (i as f64 * 0.05).sin() * 0.2).collect(), 22_050).unwrap();
        let p = c.classify_wav_bytes(&encode_wav_bytes(&clip)).unwrap();
        assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(c.classify_wav_bytes(b"garbage").is_err());
    }

    #[test]
    fn mismatched_feature_shape_is_rejected() {
        let mut m = model_for(&FeatureConfig::with_kind(FeatureKind::Gfcc));
        attach_feature_config(&mut m, &FeatureConfig::with_kind(FeatureKind::MelSpectrogram));
        assert!(matches!(Classifier::new(m), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn missing_metadata_means_default_features() {
        let m = Model::new(ModelConfig::default()).unwrap();
        assert_eq!(feature_config_of(&m).unwrap(), FeatureConfig::default());
        assert_eq!(label_name(3), "no_vehicle");
    }
}
