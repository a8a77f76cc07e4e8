use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use vehicle_acoustics::augment::{augment_corpus, AugmentationParams};
use vehicle_acoustics::dataset::DatasetManifest;
use vehicle_acoustics::features::{FeatureConfig, GLOBAL_DIM};
use vehicle_acoustics::nn::{save_checkpoint, ModelConfig};
use vehicle_acoustics::pipeline::{attach_feature_config, label_name, Classifier};
use vehicle_acoustics::synth::{generate_corpus, SynthSpec, MANIFEST_NAME};
use vehicle_acoustics::train::{
    cross_validate, kfold_split, CrossValidationReport, FeatureStore, History, TrainConfig, TrainingSet,
};
use vehicle_acoustics::Error;

use crate::args::{AugmentArgs, ExtractArgs, PredictArgs, SynthArgs, TrainArgs};
use crate::config::FileConfig;
use crate::error::CliError;

pub const DEFAULT_FOLDS: usize = 5;

fn say(out: &mut dyn Write, msg: impl AsRef<str>) {
    // A closed stdout is not worth failing the command over.
    let _ = writeln!(out, "{}", msg.as_ref());
}

fn load_manifest(path: &Path, wrap: fn(String) -> CliError) -> Result<DatasetManifest, CliError> {
    DatasetManifest::load(path).map_err(|e| wrap(e.to_string()))
}

pub fn cmd_augment(args: &AugmentArgs, file: &FileConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let sec = &file.augment;
    let d = AugmentationParams::default();
    let params = AugmentationParams {
        gain_min: args.gain_min.or(sec.gain_min).unwrap_or(d.gain_min),
        gain_max: args.gain_max.or(sec.gain_max).unwrap_or(d.gain_max),
        noise_rate_min: args.noise_min.or(sec.noise_min).unwrap_or(d.noise_rate_min),
        noise_rate_max: args.noise_max.or(sec.noise_max).unwrap_or(d.noise_rate_max),
        stretch_min: args.stretch_min.or(sec.stretch_min).unwrap_or(d.stretch_min),
        stretch_max: args.stretch_max.or(sec.stretch_max).unwrap_or(d.stretch_max),
        seed: args.seed.or(sec.seed).unwrap_or(d.seed),
    };
    params.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let keep_going = args.keep_going || sec.keep_going.unwrap_or(false);
    let manifest = load_manifest(&args.manifest, CliError::Augment)?;
    let outcome = augment_corpus(&manifest, &params, &args.out_dir).map_err(|e| CliError::Augment(e.to_string()))?;
    let out_manifest = args.out_dir.join(MANIFEST_NAME);
    outcome.manifest.save(&out_manifest).map_err(|e| CliError::Augment(e.to_string()))?;
    let originals = manifest.iter().filter(|e| e.is_original()).count();
    say(
        out,
        format!(
            "augmented {originals} originals: {} -> {} entries, manifest {}",
            manifest.len(),
            outcome.manifest.len(),
            out_manifest.display()
        ),
    );
    for (id, err) in &outcome.failures {
        say(out, format!("failed {id}: {err}"));
    }
    if !outcome.failures.is_empty() && !keep_going {
        return Err(CliError::Augment(format!("{} recordings failed", outcome.failures.len())));
    }
    Ok(())
}

fn feature_config(kind: Option<crate::args::FeatureArg>, file: &FileConfig) -> Result<FeatureConfig, CliError> {
    let sec = &file.features;
    let mut cfg = FeatureConfig::default();
    if let Some(k) = kind.map(Into::into).or(sec.kind()?) {
        cfg.kind = k;
    }
    if let Some(v) = sec.pre_emphasis {
        cfg.pre_emphasis = v;
    }
    if let Some(v) = sec.n_mels {
        cfg.n_mels = v;
    }
    if let Some(v) = sec.n_mfcc {
        cfg.n_mfcc = v;
    }
    if let Some(v) = sec.n_gammatone {
        cfg.n_gammatone = v;
    }
    if let Some(v) = sec.n_gfcc {
        cfg.n_gfcc = v;
    }
    if let Some(v) = sec.gammatone_f_min {
        cfg.gammatone_f_min = v;
    }
    if let Some(v) = sec.gfcc_compression {
        cfg.gfcc_compression = v;
    }
    Ok(cfg)
}

fn open_store(cfg: FeatureConfig, cache: Option<PathBuf>) -> Result<FeatureStore, CliError> {
    FeatureStore::new(cfg, cache).map_err(|e| match e {
        Error::InvalidConfig(_) | Error::DegenerateBand(_) => CliError::Usage(e.to_string()),
        other => CliError::Extract(other.to_string()),
    })
}

pub fn cmd_extract(args: &ExtractArgs, file: &FileConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = feature_config(args.features, file)?;
    let manifest = load_manifest(&args.manifest, CliError::Extract)?;
    if manifest.is_empty() {
        return Err(CliError::Extract(format!("{} has no entries", args.manifest.display())));
    }
    let cache = args
        .cache_dir
        .clone()
        .or_else(|| file.features.cache_dir.clone())
        .unwrap_or_else(|| args.manifest.parent().unwrap_or(Path::new(".")).join("feature-cache"));
    let (rows, cols) = cfg.local_shape();
    let kind = cfg.kind;
    let store = open_store(cfg, Some(cache.clone()))?;
    let outcome = store.extract_manifest(&manifest);
    say(
        out,
        format!(
            "{}: {rows}x{cols} + {GLOBAL_DIM} ({} files, cache {})",
            kind.short_name(),
            outcome.features.len(),
            cache.display()
        ),
    );
    if let Some((id, err)) = outcome.failures.first() {
        for (id, err) in &outcome.failures {
            say(out, format!("failed {id}: {err}"));
        }
        return Err(CliError::Extract(format!(
            "{} of {} files unreadable (first: {id}: {err})",
            outcome.failures.len(),
            manifest.len()
        )));
    }
    Ok(())
}

/// Everything `train` writes to the JSON report.
#[derive(Debug, Serialize)]
pub struct TrainReport<'a> {
    pub folds: usize,
    pub examples: usize,
    pub feature_config: &'a FeatureConfig,
    pub model_config: &'a ModelConfig,
    pub train_config: &'a TrainConfig,
    pub parameter_count: usize,
    pub best_fold: usize,
    pub cross_validation: &'a CrossValidationReport,
    pub histories: &'a [History],
}

/// Paths written by `train` for a given `--out`.
pub fn fold_checkpoint_path(out: &Path, fold: usize) -> PathBuf {
    out.with_extension(format!("fold{fold}.ckpt"))
}

pub fn report_paths(out: &Path) -> (PathBuf, PathBuf) {
    (out.with_extension("report.txt"), out.with_extension("report.json"))
}

pub fn cmd_train(args: &TrainArgs, file: &FileConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let sec = &file.train;
    let d = TrainConfig::default();
    let train_cfg = TrainConfig {
        epochs: args.epochs.or(sec.epochs).unwrap_or(d.epochs),
        early_stop_patience: args.early_stop_patience.or(sec.early_stop_patience).unwrap_or(d.early_stop_patience),
        lr_initial: args.lr.or(sec.lr_initial).unwrap_or(d.lr_initial),
        lr_reduce_patience: args.lr_patience.or(sec.lr_reduce_patience).unwrap_or(d.lr_reduce_patience),
        lr_reduce_factor: args.lr_factor.or(sec.lr_reduce_factor).unwrap_or(d.lr_reduce_factor),
        lr_min: args.lr_min.or(sec.lr_min).unwrap_or(d.lr_min),
        batch_size: args.batch_size.or(sec.batch_size).unwrap_or(d.batch_size),
        seed: args.seed.or(sec.seed).unwrap_or(d.seed),
    };
    train_cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let k = args.folds.or(sec.folds).unwrap_or(DEFAULT_FOLDS);
    if k < 2 {
        return Err(CliError::Usage(format!("--folds must be at least 2, got {k}")));
    }
    let feat_cfg = feature_config(args.features, file)?;
    let (rows, cols) = feat_cfg.local_shape();
    let ms = &file.model;
    let md = ModelConfig::for_local_shape(rows, cols);
    let model_cfg = ModelConfig {
        conv_channels: ms.conv_channels.clone().unwrap_or(md.conv_channels),
        kernel_size: ms.kernel_size.unwrap_or(md.kernel_size),
        global_hidden: ms.global_hidden.unwrap_or(md.global_hidden),
        head_hidden: ms.head_hidden.unwrap_or(md.head_hidden),
        dropout: args.dropout.or(ms.dropout).unwrap_or(md.dropout),
        batch_norm: args.batch_norm || ms.batch_norm.unwrap_or(md.batch_norm),
        rng_seed: ms.rng_seed.unwrap_or(train_cfg.seed),
        ..md
    };
    model_cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let manifest = load_manifest(&args.manifest, CliError::Extract)?;
    if manifest.is_empty() {
        return Err(CliError::Extract(format!("{} has no entries", args.manifest.display())));
    }
    // Keep an existing assignment if it already covers k folds; otherwise split.
    let assigned = manifest.iter().all(|e| e.fold.is_some_and(|f| f < k));
    let manifest = if assigned {
        manifest
    } else {
        kfold_split(&manifest, k, train_cfg.seed).map_err(|e| CliError::Failed(e.to_string()))?
    };
    let store = open_store(feat_cfg.clone(), args.cache_dir.clone().or_else(|| file.features.cache_dir.clone()))?;
    let extracted = store.extract_manifest(&manifest);
    if let Some((id, err)) = extracted.failures.first() {
        return Err(CliError::Extract(format!(
            "{} of {} files unreadable (first: {id}: {err})",
            extracted.failures.len(),
            manifest.len()
        )));
    }
    let data = TrainingSet::from_features(&manifest, &extracted.features).map_err(|e| CliError::Failed(e.to_string()))?;
    say(
        out,
        format!(
            "training on {} examples, {k} folds, {} features {rows}x{cols} + {GLOBAL_DIM}, {} parameters",
            data.len(),
            feat_cfg.kind.short_name(),
            model_cfg.parameter_count()
        ),
    );
    let cv = cross_validate(&data, k, &model_cfg, &train_cfg).map_err(|e| match e {
        Error::Divergence { .. } => CliError::Divergence(e.to_string()),
        other => CliError::Failed(other.to_string()),
    })?;

    let write_err = |e: Error| CliError::Failed(e.to_string());
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Failed(format!("{}: {e}", dir.display())))?;
    }
    let best = cv.report.best_fold();
    for (fold, model) in cv.models.iter().enumerate() {
        let mut model = model.clone();
        attach_feature_config(&mut model, &feat_cfg);
        save_checkpoint(&model, &fold_checkpoint_path(&args.out, fold)).map_err(write_err)?;
        if fold == best {
            save_checkpoint(&model, &args.out).map_err(write_err)?;
        }
    }
    let report = TrainReport {
        folds: k,
        examples: data.len(),
        feature_config: &feat_cfg,
        model_config: &model_cfg,
        train_config: &train_cfg,
        parameter_count: model_cfg.parameter_count(),
        best_fold: best,
        cross_validation: &cv.report,
        histories: &cv.histories,
    };
    let (txt, json) = report_paths(&args.out);
    let text = cv.report.to_text();
    let fail = |p: &Path, e: std::io::Error| CliError::Failed(format!("{}: {e}", p.display()));
    std::fs::write(&txt, &text).map_err(|e| fail(&txt, e))?;
    let mut body = serde_json::to_string_pretty(&report).expect("report serializes");
    body.push('\n');
    std::fs::write(&json, body).map_err(|e| fail(&json, e))?;
    say(out, text.trim_end());
    say(
        out,
        format!(
            "wrote {} (fold {best}, accuracy {:.4}) and {}",
            args.out.display(),
            cv.report.folds[best].accuracy,
            json.display()
        ),
    );
    Ok(())
}

pub fn cmd_predict(args: &PredictArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let classifier = Classifier::from_checkpoint(&args.model).map_err(|e| CliError::Predict(e.to_string()))?;
    let p = classifier.classify_wav(&args.wav).map_err(|e| CliError::Predict(e.to_string()))?;
    say(out, format!("{} {:.4}", label_name(p.label), p.confidence));
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = SynthSpec::with_samples(args.per_class, args.seed);
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let m = generate_corpus(&spec, &args.out_dir).map_err(|e| CliError::Failed(e.to_string()))?;
    say(
        out,
        format!("wrote {} clips and {}", m.len(), args.out_dir.join(MANIFEST_NAME).display()),
    );
    Ok(())
}
