use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{ConfusionMatrix, CrossValidationReport, EvalReport};
use super::schedule::PlateauTracker;
use super::store::TrainingSet;
use super::{stream_rng, stream_seed};
use crate::dataset::N_CLASSES;
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, Example, Model, ModelConfig, Pass, PROB_FLOOR};

/// Rows per forward pass when scoring whole folds.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub early_stop_patience: usize,
    pub lr_initial: f64,
    pub lr_reduce_patience: usize,
    pub lr_reduce_factor: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            early_stop_patience: 8,
            lr_initial: 1e-2,
            lr_reduce_patience: 4,
            lr_reduce_factor: 0.5,
            lr_min: 1e-3,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1");
        }
        if self.early_stop_patience == 0 || self.lr_reduce_patience == 0 {
            return bad("patience values must be at least 1");
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_initial && self.lr_initial.is_finite()) {
            return bad("learning rates must satisfy 0 < lr_min <= lr_initial");
        }
        if !(self.lr_reduce_factor > 0.0 && self.lr_reduce_factor < 1.0) {
            return bad("lr_reduce_factor must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub fold: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Mean cross-entropy, accuracy and predicted classes over `examples`,
/// in inference mode.
pub fn score(model: &Model, examples: &[&Example]) -> Result<(f64, f64, Vec<usize>)> {
    if examples.is_empty() {
        return Err(Error::TooFewSamples("nothing to score".into()));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut predicted = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(EVAL_CHUNK) {
        for (ex, p) in chunk.iter().zip(model.predict_batch(chunk)?) {
            loss -= p.probabilities[ex.label].max(PROB_FLOOR).ln();
            correct += usize::from(p.label == ex.label);
            predicted.push(p.label);
        }
    }
    let n = examples.len() as f64;
    Ok((loss / n, correct as f64 / n, predicted))
}

/// Trains on every fold except `fold`, monitoring loss on `fold`.
///
/// The held-out fold drives both learning-rate reduction and early
/// stopping, and the weights from the epoch with the lowest held-out loss
/// are restored at the end.
pub fn train_fold(data: &TrainingSet, fold: usize, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<(Model, History)> {
    cfg.validate()?;
    let train = data.training(fold);
    let val = data.held_out(fold);
    if val.is_empty() {
        return Err(Error::EmptyFold(fold));
    }
    if train.is_empty() {
        return Err(Error::TooFewSamples(format!("no training examples outside fold {fold}")));
    }
    let mut model = Model::new(model_cfg.clone())?;
    model.set_standardization(crate::nn::Standardization::fit(model_cfg, &train)?)?;
    let adam = AdamConfig::default();
    let mut tracker = PlateauTracker::new(cfg.lr_initial, cfg.lr_min, cfg.lr_reduce_factor, cfg.lr_reduce_patience, cfg.early_stop_patience);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = History {
        fold,
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
    };
    let mut best = model.clone();
    let fold_tag = fold.to_string();
    for epoch in 1..=cfg.epochs {
        let lr = tracker.lr();
        let epoch_tag = epoch.to_string();
        order.sort_unstable();
        order.shuffle(&mut stream_rng(cfg.seed, &["shuffle", &fold_tag, &epoch_tag]));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Example> = idx.iter().map(|&i| train[i]).collect();
            let seed = stream_seed(cfg.seed, &["dropout", &fold_tag, &epoch_tag, &b.to_string()]);
            let out = model.train_batch(&batch, Pass::Train { seed })?;
            if !out.loss.is_finite() || !out.gradients.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            model.adam_step(&out.gradients, lr, &adam)?;
            if !model.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            loss_sum += out.loss * batch.len() as f64;
            correct += batch.iter().zip(&out.predicted).filter(|(e, &p)| e.label == p).count();
        }
        let (val_loss, val_accuracy, _) = score(&model, &val)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_loss,
            val_accuracy,
            lr,
        });
        let decision = tracker.observe(val_loss);
        if decision.improved {
            best = model.clone();
            history.best_epoch = epoch;
            history.best_val_loss = val_loss;
        }
        if decision.stop && epoch < cfg.epochs {
            history.stopped_early = true;
            break;
        }
    }
    Ok((best, history))
}

/// Scores a frozen model on one fold.
pub fn evaluate(model: &Model, data: &TrainingSet, fold: usize) -> Result<EvalReport> {
    if model.config().n_classes != N_CLASSES {
        return Err(Error::InvalidConfig(format!("reports need a {N_CLASSES}-class model")));
    }
    let examples = data.held_out(fold);
    if examples.is_empty() {
        return Err(Error::EmptyFold(fold));
    }
    let (_, _, predicted) = score(model, &examples)?;
    let cm = ConfusionMatrix::from_pairs(examples.iter().zip(predicted).map(|(e, p)| (e.label, p)));
    EvalReport::from_confusion(Some(fold), cm)
}

#[derive(Debug, Clone)]
pub struct CrossValidation {
    pub models: Vec<Model>,
    pub histories: Vec<History>,
    pub report: CrossValidationReport,
}

/// Trains and evaluates one model per fold. Folds run in parallel; results
/// come back in fold order and do not depend on scheduling.
pub fn cross_validate(data: &TrainingSet, k: usize, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<CrossValidation> {
    cfg.validate()?;
    let runs: Vec<Result<(Model, History, EvalReport)>> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let (model, history) = train_fold(data, fold, model_cfg, cfg)?;
            let report = evaluate(&model, data, fold)?;
            Ok((model, history, report))
        })
        .collect();
    let mut models = Vec::with_capacity(k);
    let mut histories = Vec::with_capacity(k);
    let mut reports = Vec::with_capacity(k);
    for run in runs {
        let (m, h, r) = run?;
        models.push(m);
        histories.push(h);
        reports.push(r);
    }
    Ok(CrossValidation {
        models,
        histories,
        report: CrossValidationReport::from_folds(reports)?,
    })
}
