//! Fold assignment, the training loop, and evaluation metrics.

mod folds;
mod metrics;
mod schedule;
mod store;
mod trainer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub use folds::kfold_split;
pub use metrics::{ClassMetrics, ConfusionMatrix, CrossValidationReport, EvalReport};
pub use schedule::{EpochDecision, PlateauTracker};
pub use store::{ExtractOutcome, FeatureStore, TrainingSet};
pub use trainer::{cross_validate, evaluate, score, train_fold, CrossValidation, EpochRecord, History, TrainConfig};

/// Derives an independent seed from a base seed and a list of tags.
pub(crate) fn stream_seed(seed: u64, tags: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for t in tags {
        h.update(t.as_bytes());
        h.update([0u8]);
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

pub(crate) fn stream_rng(seed: u64, tags: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, tags))
}
