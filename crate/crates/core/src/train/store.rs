use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::audio::decode_wav_bytes;
use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::features::{blob, FeatureConfig, FeatureExtractor, FeatureSet};
use crate::nn::Example;

/// Extracts features for audio files, optionally through an on-disk cache
/// keyed by file content and feature configuration.
///
/// Every returned set is rounded to `f32`, whether it came from the cache
/// or not, so cached and uncached runs see identical numbers.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    extractor: FeatureExtractor,
    cache_dir: Option<PathBuf>,
}

#[derive(Debug, Default)]
pub struct ExtractOutcome {
    /// Keyed by manifest id.
    pub features: HashMap<String, FeatureSet>,
    pub failures: Vec<(String, Error)>,
}

impl FeatureStore {
    pub fn new(config: FeatureConfig, cache_dir: Option<PathBuf>) -> Result<Self> {
        if let Some(dir) = &cache_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(Self {
            extractor: FeatureExtractor::new(config)?,
            cache_dir,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        self.extractor.config()
    }

    pub fn features_for(&self, path: &Path) -> Result<FeatureSet> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let cache_path = self.cache_dir.as_ref().map(|dir| {
            let file_hash = Sha256::digest(&bytes);
            let key: String = file_hash[..16].iter().map(|b| format!("{b:02x}")).collect();
            dir.join(format!("{key}_{}.vafm", self.config().digest()))
        });
        let (kind, hop) = (self.config().kind, self.config().stft.hop_size);
        if let Some(cached) = cache_path.as_ref().and_then(|p| std::fs::read(p).ok()) {
            if let Ok(set) = blob::decode_set(&cached, kind, hop) {
                if set.local.shape() == self.config().local_shape() {
                    return Ok(set);
                }
            }
        }
        let clip = decode_wav_bytes(&bytes)?;
        let set = self.extractor.extract(&clip)?.to_cache_precision();
        if let Some(p) = cache_path {
            // Write then rename so a concurrent reader never sees half a file.
            let tmp = p.with_extension(format!("tmp{}", std::process::id()));
            std::fs::write(&tmp, blob::encode_set(&set)).map_err(|e| Error::io(&tmp, e))?;
            std::fs::rename(&tmp, &p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(set)
    }

    /// Extracts every manifest entry in parallel. Entries that fail are
    /// reported and left out.
    pub fn extract_manifest(&self, manifest: &DatasetManifest) -> ExtractOutcome {
        let results: Vec<(String, Result<FeatureSet>)> = manifest
            .entries
            .par_iter()
            .map(|e| (e.id.clone(), self.features_for(&e.path)))
            .collect();
        let mut out = ExtractOutcome::default();
        for (id, r) in results {
            match r {
                Ok(set) => {
                    out.features.insert(id, set);
                }
                Err(e) => out.failures.push((id, e)),
            }
        }
        out
    }
}

/// Training examples with their fold assignment, in manifest order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    pub ids: Vec<String>,
    pub folds: Vec<usize>,
    pub examples: Vec<Example>,
}

impl TrainingSet {
    /// Pairs manifest entries with extracted features. Entries without
    /// features (failed extraction) are skipped; entries without a fold are
    /// an error.
    pub fn from_features(manifest: &DatasetManifest, features: &HashMap<String, FeatureSet>) -> Result<Self> {
        let mut set = Self::default();
        for e in manifest.iter() {
            let Some(f) = features.get(&e.id) else {
                continue;
            };
            let fold = e.fold.ok_or_else(|| Error::Manifest(format!("entry `{}` has no fold assignment", e.id)))?;
            set.push(e.id.clone(), fold, Example::new(&f.local, &f.global, e.label.index()));
        }
        Ok(set)
    }

    pub fn push(&mut self, id: String, fold: usize, example: Example) {
        self.ids.push(id);
        self.folds.push(fold);
        self.examples.push(example);
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// `1 + max fold`, or 0 when empty.
    pub fn n_folds(&self) -> usize {
        self.folds.iter().max().map_or(0, |m| m + 1)
    }

    pub fn held_out(&self, fold: usize) -> Vec<&Example> {
        self.select(|f| f == fold)
    }

    pub fn training(&self, fold: usize) -> Vec<&Example> {
        self.select(|f| f != fold)
    }

    fn select(&self, keep: impl Fn(usize) -> bool) -> Vec<&Example> {
        self.examples.iter().zip(&self.folds).filter(|(_, &f)| keep(f)).map(|(e, _)| e).collect()
    }

    /// Local matrix shape `(frames, coeffs)` implied by the first example.
    pub fn local_shape(&self, coeffs: usize) -> (usize, usize) {
        self.examples.first().map_or((0, coeffs), |e| (e.local.len() / coeffs, coeffs))
    }
}
