use std::borrow::Borrow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_update, AdamConfig};
use crate::error::{Error, Result};
use crate::features::{GlobalFeatureVector, LocalFeatureMatrix, GLOBAL_DIM};

/// Probability floor inside the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;
pub const BN_EPSILON: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.99;
const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Frames in the local matrix (time axis, convolved over).
    pub local_frames: usize,
    /// Coefficients per frame (input channels of the first convolution).
    pub local_coeffs: usize,
    pub global_dim: usize,
    pub conv_channels: Vec<usize>,
    pub kernel_size: usize,
    pub global_hidden: usize,
    pub head_hidden: usize,
    pub n_classes: usize,
    pub rng_seed: u64,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub batch_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            local_frames: 130,
            local_coeffs: 40,
            global_dim: GLOBAL_DIM,
            conv_channels: vec![48, 48],
            kernel_size: 3,
            global_hidden: 48,
            head_hidden: 160,
            n_classes: 4,
            rng_seed: 0,
            dropout: 0.0,
            batch_norm: false,
        }
    }
}

impl ModelConfig {
    pub fn for_local_shape(frames: usize, coeffs: usize) -> Self {
        Self {
            local_frames: frames,
            local_coeffs: coeffs,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_classes < 2 {
            return bad(format!("n_classes must be at least 2, got {}", self.n_classes));
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if self.conv_channels.is_empty() {
            return bad("at least one convolution layer is required".into());
        }
        let widths = [self.local_frames, self.local_coeffs, self.global_dim, self.global_hidden, self.head_hidden];
        if widths.iter().chain(&self.conv_channels).any(|&w| w == 0) {
            return bad("all widths must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    /// Closed-form trainable parameter count.
    pub fn parameter_count(&self) -> usize {
        let k = self.kernel_size;
        let mut total = 0;
        let mut c_in = self.local_coeffs;
        for &c in &self.conv_channels {
            total += k * c_in * c + c;
            c_in = c;
        }
        total += self.global_dim * self.global_hidden + self.global_hidden;
        total += (c_in + self.global_hidden) * self.head_hidden + self.head_hidden;
        total += self.head_hidden * self.n_classes + self.n_classes;
        if self.batch_norm {
            total += 2 * (self.global_hidden + self.head_hidden);
        }
        total
    }

    fn pooled_width(&self) -> usize {
        *self.conv_channels.last().expect("validated")
    }
}

/// A named parameter or buffer. Buffers (batch-norm running statistics)
/// are not trainable and have no Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub trainable: bool,
}

impl Tensor {
    fn new(name: impl Into<String>, shape: Vec<usize>, fill: f32, trainable: bool) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            data: vec![fill; len],
            trainable,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Z-score statistics applied to inputs before the first layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub global_mean: Vec<f32>,
    pub global_std: Vec<f32>,
    /// Per coefficient, shared by all frames.
    pub local_mean: Vec<f32>,
    pub local_std: Vec<f32>,
}

impl Standardization {
    pub fn identity(cfg: &ModelConfig) -> Self {
        Self {
            global_mean: vec![0.0; cfg.global_dim],
            global_std: vec![1.0; cfg.global_dim],
            local_mean: vec![0.0; cfg.local_coeffs],
            local_std: vec![1.0; cfg.local_coeffs],
        }
    }

    /// Fits population statistics over `examples`. Constant inputs get a
    /// unit std so they map to zero rather than blowing up.
    pub fn fit<E: Borrow<Example>>(cfg: &ModelConfig, examples: &[E]) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::TooFewSamples("cannot fit standardization on zero examples".into()));
        }
        for ex in examples {
            ex.borrow().check(cfg)?;
        }
        let n = cfg.local_coeffs;
        let mut g = MeanVar::new(cfg.global_dim);
        let mut l = MeanVar::new(n);
        for ex in examples.iter().map(Borrow::borrow) {
            g.push(&ex.global);
            for row in ex.local.chunks_exact(n) {
                l.push(row);
            }
        }
        let (global_mean, global_std) = g.finish();
        let (local_mean, local_std) = l.finish();
        Ok(Self {
            global_mean,
            global_std,
            local_mean,
            local_std,
        })
    }

    fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let ok = self.global_mean.len() == cfg.global_dim
            && self.global_std.len() == cfg.global_dim
            && self.local_mean.len() == cfg.local_coeffs
            && self.local_std.len() == cfg.local_coeffs;
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("standardization vectors do not match the model config".into()))
        }
    }

    fn apply(values: &[f64], mean: &[f32], std: &[f32]) -> Vec<f64> {
        let n = mean.len();
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - f64::from(mean[i % n])) / f64::from(std[i % n]))
            .collect()
    }
}

/// Welford accumulator over vectors of a fixed width.
struct MeanVar {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl MeanVar {
    fn new(width: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; width],
            m2: vec![0.0; width],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.count += 1.0;
        for (i, &v) in x.iter().enumerate() {
            let d = v - self.mean[i];
            self.mean[i] += d / self.count;
            self.m2[i] += d * (v - self.mean[i]);
        }
    }

    fn finish(self) -> (Vec<f32>, Vec<f32>) {
        let std = self
            .m2
            .iter()
            .map(|&m2| {
                let s = (m2 / self.count).sqrt();
                if s > STD_FLOOR {
                    s as f32
                } else {
                    1.0
                }
            })
            .collect();
        (self.mean.iter().map(|&m| m as f32).collect(), std)
    }
}

/// One network input with its class index. `local` is row-major
/// frames × coeffs; both parts are raw (unstandardized) features.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub local: Vec<f64>,
    pub global: Vec<f64>,
    pub label: usize,
}

impl Example {
    pub fn new(local: &LocalFeatureMatrix, global: &GlobalFeatureVector, label: usize) -> Self {
        Self {
            local: local.values().to_vec(),
            global: global.values.to_vec(),
            label,
        }
    }

    fn check(&self, cfg: &ModelConfig) -> Result<()> {
        check_input(cfg, &self.local, &self.global)?;
        if self.label >= cfg.n_classes {
            return Err(Error::ShapeMismatch(format!(
                "label {} out of range for {} classes",
                self.label, cfg.n_classes
            )));
        }
        Ok(())
    }
}

fn check_input(cfg: &ModelConfig, local: &[f64], global: &[f64]) -> Result<()> {
    let want = cfg.local_frames * cfg.local_coeffs;
    if local.len() != want {
        return Err(Error::ShapeMismatch(format!(
            "local input has {} values, model expects {}x{}",
            local.len(),
            cfg.local_frames,
            cfg.local_coeffs
        )));
    }
    if global.len() != cfg.global_dim {
        return Err(Error::ShapeMismatch(format!(
            "global input has {} values, model expects {}",
            global.len(),
            cfg.global_dim
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub label: usize,
    pub confidence: f64,
}

impl Prediction {
    pub fn from_probabilities(probabilities: Vec<f64>) -> Self {
        let label = argmax(&probabilities);
        let confidence = probabilities[label];
        Self {
            probabilities,
            label,
            confidence,
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Whether a batch runs in inference mode or training mode. Training mode
/// uses batch statistics in batch-norm layers and samples a dropout mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    Eval,
    Train { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct BnIdx {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    conv: Vec<(usize, usize)>,
    global: (usize, usize),
    global_bn: Option<BnIdx>,
    head: (usize, usize),
    head_bn: Option<BnIdx>,
    out: (usize, usize),
}

/// Per-tensor gradients, aligned with [`Model::tensors`]. Buffers get an
/// empty vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub values: Vec<Vec<f64>>,
    bn_batch: Vec<(usize, Vec<f64>)>,
}

impl Gradients {
    pub fn l2_norm(&self) -> f64 {
        self.values.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().flatten().all(|g| g.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub loss: f64,
    pub gradients: Gradients,
    pub predicted: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    tensors: Vec<Tensor>,
    moments: Vec<(Vec<f32>, Vec<f32>)>,
    step: u64,
    standardization: Standardization,
    metadata: String,
    layout: Layout,
}

impl Model {
    /// Builds a freshly initialized network. Weights are He-uniform from
    /// `rng_seed`, biases zero.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let mut model = Self::skeleton(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(model.config.rng_seed);
        for t in model.tensors.iter_mut() {
            if t.trainable && t.name.ends_with(".weight") {
                let fan_in: usize = t.shape[1..].iter().product();
                let limit = (6.0 / fan_in as f64).sqrt();
                for w in t.data.iter_mut() {
                    *w = rng.gen_range(-limit..limit) as f32;
                }
            }
        }
        Ok(model)
    }

    /// Allocates every tensor with its neutral fill (zero weights).
    pub(crate) fn skeleton(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut tensors = Vec::new();
        let mut push = |t: Tensor| {
            tensors.push(t);
            tensors.len() - 1
        };
        let k = config.kernel_size;
        let mut conv = Vec::new();
        let mut c_in = config.local_coeffs;
        for (i, &c) in config.conv_channels.iter().enumerate() {
            let w = push(Tensor::new(format!("conv{i}.weight"), vec![c, k, c_in], 0.0, true));
            let b = push(Tensor::new(format!("conv{i}.bias"), vec![c], 0.0, true));
            conv.push((w, b));
            c_in = c;
        }
        let bn = |prefix: &str, width: usize, push: &mut dyn FnMut(Tensor) -> usize| BnIdx {
            gamma: push(Tensor::new(format!("{prefix}.gamma"), vec![width], 1.0, true)),
            beta: push(Tensor::new(format!("{prefix}.beta"), vec![width], 0.0, true)),
            mean: push(Tensor::new(format!("{prefix}.moving_mean"), vec![width], 0.0, false)),
            var: push(Tensor::new(format!("{prefix}.moving_var"), vec![width], 1.0, false)),
        };
        let (gh, hh) = (config.global_hidden, config.head_hidden);
        let global = (
            push(Tensor::new("global.weight", vec![gh, config.global_dim], 0.0, true)),
            push(Tensor::new("global.bias", vec![gh], 0.0, true)),
        );
        let global_bn = config.batch_norm.then(|| bn("global_bn", gh, &mut push));
        let head = (
            push(Tensor::new("head.weight", vec![hh, c_in + gh], 0.0, true)),
            push(Tensor::new("head.bias", vec![hh], 0.0, true)),
        );
        let head_bn = config.batch_norm.then(|| bn("head_bn", hh, &mut push));
        let out = (
            push(Tensor::new("output.weight", vec![config.n_classes, hh], 0.0, true)),
            push(Tensor::new("output.bias", vec![config.n_classes], 0.0, true)),
        );
        let moments = tensors
            .iter()
            .map(|t| if t.trainable { (vec![0.0; t.len()], vec![0.0; t.len()]) } else { (Vec::new(), Vec::new()) })
            .collect();
        Ok(Self {
            standardization: Standardization::identity(&config),
            config,
            tensors,
            moments,
            step: 0,
            metadata: String::new(),
            layout: Layout {
                conv,
                global,
                global_bn,
                head,
                head_bn,
                out,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    /// Counts trainable scalars by enumerating tensors.
    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().filter(|t| t.trainable).map(Tensor::len).sum()
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    pub fn set_standardization(&mut self, s: Standardization) -> Result<()> {
        s.check(&self.config)?;
        self.standardization = s;
        Ok(())
    }

    /// Free-form text stored alongside the weights (the CLI keeps the
    /// feature configuration here).
    pub fn metadata(&self) -> &str {
        &self.metadata
    }

    pub fn set_metadata(&mut self, metadata: impl Into<String>) {
        self.metadata = metadata.into();
    }

    /// Number of optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub(crate) fn moments(&self) -> &[(Vec<f32>, Vec<f32>)] {
        &self.moments
    }

    pub(crate) fn restore_state(&mut self, tensors: Vec<Tensor>, moments: Vec<(Vec<f32>, Vec<f32>)>, step: u64) {
        self.tensors = tensors;
        self.moments = moments;
        self.step = step;
    }

    /// Classifies one clip's features.
    pub fn forward(&self, local: &LocalFeatureMatrix, global: &GlobalFeatureVector) -> Result<Prediction> {
        if local.shape() != (self.config.local_frames, self.config.local_coeffs) {
            return Err(Error::ShapeMismatch(format!(
                "local matrix is {}x{}, model expects {}x{}",
                local.rows(),
                local.cols(),
                self.config.local_frames,
                self.config.local_coeffs
            )));
        }
        let out = self.predict_raw(&[(local.values(), &global.values[..])])?;
        Ok(out.into_iter().next().expect("one input"))
    }

    pub fn predict_batch<E: Borrow<Example>>(&self, batch: &[E]) -> Result<Vec<Prediction>> {
        let inputs: Vec<(&[f64], &[f64])> = batch.iter().map(|e| (&e.borrow().local[..], &e.borrow().global[..])).collect();
        self.predict_raw(&inputs)
    }

    fn predict_raw(&self, inputs: &[(&[f64], &[f64])]) -> Result<Vec<Prediction>> {
        for (l, g) in inputs {
            check_input(&self.config, l, g)?;
        }
        let run = self.run(inputs, None, Pass::Eval);
        Ok(run.probs.chunks_exact(self.config.n_classes).map(|p| Prediction::from_probabilities(p.to_vec())).collect())
    }

    /// Raw output-layer activations before the softmax, one row per input.
    pub fn logits<E: Borrow<Example>>(&self, batch: &[E]) -> Result<Vec<Vec<f64>>> {
        for ex in batch.iter().map(Borrow::borrow) {
            check_input(&self.config, &ex.local, &ex.global)?;
        }
        let inputs: Vec<(&[f64], &[f64])> = batch.iter().map(|e| (&e.borrow().local[..], &e.borrow().global[..])).collect();
        let run = self.run(&inputs, None, Pass::Eval);
        Ok(run.logits.chunks_exact(self.config.n_classes).map(<[f64]>::to_vec).collect())
    }

    /// Mean cross-entropy over the batch, without gradients.
    pub fn loss<E: Borrow<Example>>(&self, batch: &[E], pass: Pass) -> Result<f64> {
        let (inputs, labels) = self.prepare(batch)?;
        Ok(self.run(&inputs, Some(&labels), pass).loss)
    }

    /// Mean cross-entropy and its gradient with respect to every trainable
    /// tensor.
    pub fn loss_and_gradients<E: Borrow<Example>>(&self, batch: &[E], pass: Pass) -> Result<(f64, Gradients)> {
        self.train_batch(batch, pass).map(|o| (o.loss, o.gradients))
    }

    /// Like [`Model::loss_and_gradients`], also reporting the predicted class
    /// of each example under the same pass.
    pub fn train_batch<E: Borrow<Example>>(&self, batch: &[E], pass: Pass) -> Result<BatchOutcome> {
        let (inputs, labels) = self.prepare(batch)?;
        let run = self.run(&inputs, Some(&labels), pass);
        let gradients = self.backward(&run, &labels);
        let predicted = run.probs.chunks_exact(self.config.n_classes).map(argmax).collect();
        Ok(BatchOutcome {
            loss: run.loss,
            gradients,
            predicted,
        })
    }

    fn prepare<'a, E: Borrow<Example>>(&self, batch: &'a [E]) -> Result<(Vec<(&'a [f64], &'a [f64])>, Vec<usize>)> {
        if batch.is_empty() {
            return Err(Error::ShapeMismatch("empty batch".into()));
        }
        for ex in batch {
            ex.borrow().check(&self.config)?;
        }
        Ok((
            batch.iter().map(|e| (&e.borrow().local[..], &e.borrow().global[..])).collect(),
            batch.iter().map(|e| e.borrow().label).collect(),
        ))
    }

    /// One Adam step with bias correction. Batch-norm running statistics
    /// recorded in `grads` are folded in at the same time.
    pub fn adam_step(&mut self, grads: &Gradients, lr: f64, cfg: &AdamConfig) -> Result<()> {
        if grads.values.len() != self.tensors.len() {
            return Err(Error::ShapeMismatch("gradient list does not match the model".into()));
        }
        for (t, g) in self.tensors.iter().zip(&grads.values) {
            let want = if t.trainable { t.len() } else { 0 };
            if g.len() != want {
                return Err(Error::ShapeMismatch(format!("gradient for {} has the wrong length", t.name)));
            }
        }
        self.step += 1;
        for (i, t) in self.tensors.iter_mut().enumerate() {
            if t.trainable {
                let (m, v) = &mut self.moments[i];
                adam_update(&mut t.data, &grads.values[i], m, v, lr, cfg, self.step);
            }
        }
        for (idx, batch) in &grads.bn_batch {
            for (r, &b) in self.tensors[*idx].data.iter_mut().zip(batch) {
                *r = (BN_MOMENTUM * f64::from(*r) + (1.0 - BN_MOMENTUM) * b) as f32;
            }
        }
        Ok(())
    }

    fn params64(&self) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| t.data.iter().map(|&v| f64::from(v)).collect()).collect()
    }

    fn run(&self, inputs: &[(&[f64], &[f64])], labels: Option<&[usize]>, pass: Pass) -> BatchRun {
        let cfg = &self.config;
        let p = self.params64();
        let st = &self.standardization;
        let keep = labels.is_some();
        let locals: Vec<(Vec<f64>, Option<LocalTrace>)> = inputs
            .par_iter()
            .map(|(l, _)| {
                let x = Standardization::apply(l, &st.local_mean, &st.local_std);
                local_forward(cfg, &self.layout, &p, x, keep)
            })
            .collect();
        let bsz = inputs.len();
        let (gw, gb) = self.layout.global;
        let (hw, hb) = self.layout.head;
        let (ow, ob) = self.layout.out;
        let (gh, hh, pw) = (cfg.global_hidden, cfg.head_hidden, cfg.pooled_width());
        let train = matches!(pass, Pass::Train { .. });

        let gx: Vec<f64> = inputs
            .iter()
            .flat_map(|(_, g)| Standardization::apply(g, &st.global_mean, &st.global_std))
            .collect();
        let gz = dense(&p[gw], &p[gb], &gx, cfg.global_dim, gh);
        let (gy, gbn) = self.batch_norm(&p, self.layout.global_bn, &gz, gh, train);
        let ga = relu(&gy);

        let mut concat = Vec::with_capacity(bsz * (pw + gh));
        for (b, (pooled, _)) in locals.iter().enumerate() {
            concat.extend_from_slice(pooled);
            concat.extend_from_slice(&ga[b * gh..(b + 1) * gh]);
        }
        let hz = dense(&p[hw], &p[hb], &concat, pw + gh, hh);
        let (hy, hbn) = self.batch_norm(&p, self.layout.head_bn, &hz, hh, train);
        let mut ha = relu(&hy);
        let mask = match pass {
            Pass::Train { seed } if cfg.dropout > 0.0 => {
                let keep_p = 1.0 - cfg.dropout;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mask: Vec<f64> = (0..ha.len()).map(|_| if rng.gen::<f64>() < keep_p { 1.0 / keep_p } else { 0.0 }).collect();
                for (a, m) in ha.iter_mut().zip(&mask) {
                    *a *= m;
                }
                Some(mask)
            }
            _ => None,
        };
        let logits = dense(&p[ow], &p[ob], &ha, hh, cfg.n_classes);
        let probs: Vec<f64> = logits.chunks_exact(cfg.n_classes).flat_map(softmax).collect();
        let loss = labels.map_or(0.0, |labels| {
            labels
                .iter()
                .enumerate()
                .map(|(b, &y)| -probs[b * cfg.n_classes + y].max(PROB_FLOOR).ln())
                .sum::<f64>()
                / bsz as f64
        });
        BatchRun {
            p,
            loss,
            logits,
            probs,
            locals,
            gx,
            gz,
            gy,
            gbn,
            concat,
            hz,
            hy,
            hbn,
            ha,
            mask,
        }
    }

    fn batch_norm(&self, p: &[Vec<f64>], idx: Option<BnIdx>, z: &[f64], width: usize, train: bool) -> (Vec<f64>, Option<BnCache>) {
        let Some(ix) = idx else {
            return (z.to_vec(), None);
        };
        let (gamma, beta) = (&p[ix.gamma], &p[ix.beta]);
        let bsz = z.len() / width;
        let (mean, var) = if train {
            let mut mean = vec![0.0; width];
            let mut var = vec![0.0; width];
            for row in z.chunks_exact(width) {
                for j in 0..width {
                    mean[j] += row[j] / bsz as f64;
                }
            }
            for row in z.chunks_exact(width) {
                for j in 0..width {
                    var[j] += (row[j] - mean[j]).powi(2) / bsz as f64;
                }
            }
            (mean, var)
        } else {
            (p[ix.mean].clone(), p[ix.var].clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
        let xhat: Vec<f64> = z.iter().enumerate().map(|(i, &v)| (v - mean[i % width]) * inv_std[i % width]).collect();
        let y = xhat.iter().enumerate().map(|(i, &x)| gamma[i % width] * x + beta[i % width]).collect();
        (
            y,
            Some(BnCache {
                idx: ix,
                xhat,
                inv_std,
                mean,
                var,
                train,
            }),
        )
    }

    fn backward(&self, run: &BatchRun, labels: &[usize]) -> Gradients {
        let cfg = &self.config;
        let p = &run.p;
        let n = cfg.n_classes;
        let bsz = labels.len();
        let (gh, hh, pw) = (cfg.global_hidden, cfg.head_hidden, cfg.pooled_width());
        let mut g: Vec<Vec<f64>> = self.tensors.iter().map(|t| if t.trainable { vec![0.0; t.len()] } else { Vec::new() }).collect();
        let mut bn_batch = Vec::new();

        let mut dlogits = run.probs.clone();
        for (b, &y) in labels.iter().enumerate() {
            // With the floor active the loss is flat in p, so its gradient vanishes.
            if run.probs[b * n + y] < PROB_FLOOR {
                dlogits[b * n..(b + 1) * n].iter_mut().for_each(|d| *d = 0.0);
                continue;
            }
            dlogits[b * n + y] -= 1.0;
        }
        dlogits.iter_mut().for_each(|d| *d /= bsz as f64);

        let (ow, ob) = self.layout.out;
        let mut dha = dense_backward(&p[ow], &run.ha, &dlogits, hh, n, &mut g, ow, ob);
        if let Some(mask) = &run.mask {
            for (d, m) in dha.iter_mut().zip(mask) {
                *d *= m;
            }
        }
        let dhy = relu_backward(&run.hy, &dha);
        let dhz = bn_backward(p, run.hbn.as_ref(), &dhy, hh, &mut g, &mut bn_batch);
        let (hw, hb) = self.layout.head;
        let dconcat = dense_backward(&p[hw], &run.concat, &dhz, pw + gh, hh, &mut g, hw, hb);

        let mut dga = Vec::with_capacity(bsz * gh);
        let mut dpooled = Vec::with_capacity(bsz);
        for row in dconcat.chunks_exact(pw + gh) {
            dpooled.push(&row[..pw]);
            dga.extend_from_slice(&row[pw..]);
        }
        let dgy = relu_backward(&run.gy, &dga);
        let dgz = bn_backward(p, run.gbn.as_ref(), &dgy, gh, &mut g, &mut bn_batch);
        let (gw, gb) = self.layout.global;
        dense_backward(&p[gw], &run.gx, &dgz, cfg.global_dim, gh, &mut g, gw, gb);

        let per_sample: Vec<Vec<Vec<f64>>> = run
            .locals
            .par_iter()
            .zip(dpooled.par_iter())
            .map(|((_, trace), dp)| local_backward(cfg, &self.layout, p, trace.as_ref().expect("trace kept"), dp))
            .collect();
        // Fixed summation order keeps results independent of scheduling.
        for sample in &per_sample {
            for (l, &(w, b)) in self.layout.conv.iter().enumerate() {
                add_into(&mut g[w], &sample[2 * l]);
                add_into(&mut g[b], &sample[2 * l + 1]);
            }
        }
        Gradients { values: g, bn_batch }
    }
}

struct BnCache {
    idx: BnIdx,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
    train: bool,
}

struct LocalTrace {
    /// Zero-padded input of each convolution layer.
    padded: Vec<Vec<f64>>,
    /// Pre-activation output of each convolution layer.
    pre: Vec<Vec<f64>>,
}

struct BatchRun {
    p: Vec<Vec<f64>>,
    loss: f64,
    logits: Vec<f64>,
    probs: Vec<f64>,
    locals: Vec<(Vec<f64>, Option<LocalTrace>)>,
    gx: Vec<f64>,
    #[allow(dead_code)]
    gz: Vec<f64>,
    gy: Vec<f64>,
    gbn: Option<BnCache>,
    concat: Vec<f64>,
    #[allow(dead_code)]
    hz: Vec<f64>,
    hy: Vec<f64>,
    hbn: Option<BnCache>,
    ha: Vec<f64>,
    mask: Option<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

fn relu_backward(pre: &[f64], d: &[f64]) -> Vec<f64> {
    pre.iter().zip(d).map(|(&z, &g)| if z > 0.0 { g } else { 0.0 }).collect()
}

/// `y = W x + b` for each row of `x`; `W` is `[n_out, n_in]`.
fn dense(w: &[f64], b: &[f64], x: &[f64], n_in: usize, n_out: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() / n_in * n_out);
    for row in x.chunks_exact(n_in) {
        for o in 0..n_out {
            out.push(b[o] + dot(&w[o * n_in..(o + 1) * n_in], row));
        }
    }
    out
}

/// Accumulates weight and bias gradients, returns the input gradient.
#[allow(clippy::too_many_arguments)]
fn dense_backward(w: &[f64], x: &[f64], dy: &[f64], n_in: usize, n_out: usize, g: &mut [Vec<f64>], wi: usize, bi: usize) -> Vec<f64> {
    let mut dx = vec![0.0; x.len()];
    for (b, (row, drow)) in x.chunks_exact(n_in).zip(dy.chunks_exact(n_out)).enumerate() {
        let dxrow = &mut dx[b * n_in..(b + 1) * n_in];
        for o in 0..n_out {
            let d = drow[o];
            g[bi][o] += d;
            axpy(&mut g[wi][o * n_in..(o + 1) * n_in], d, row);
            axpy(dxrow, d, &w[o * n_in..(o + 1) * n_in]);
        }
    }
    dx
}

fn bn_backward(p: &[Vec<f64>], cache: Option<&BnCache>, dy: &[f64], width: usize, g: &mut [Vec<f64>], bn_batch: &mut Vec<(usize, Vec<f64>)>) -> Vec<f64> {
    let Some(c) = cache else {
        return dy.to_vec();
    };
    let gamma = &p[c.idx.gamma];
    let bsz = (dy.len() / width) as f64;
    let mut sum_d = vec![0.0; width];
    let mut sum_dx = vec![0.0; width];
    for (i, &d) in dy.iter().enumerate() {
        let j = i % width;
        g[c.idx.gamma][j] += d * c.xhat[i];
        g[c.idx.beta][j] += d;
        sum_d[j] += d * gamma[j];
        sum_dx[j] += d * gamma[j] * c.xhat[i];
    }
    if c.train {
        bn_batch.push((c.idx.mean, c.mean.clone()));
        bn_batch.push((c.idx.var, c.var.clone()));
        dy.iter()
            .enumerate()
            .map(|(i, &d)| {
                let j = i % width;
                c.inv_std[j] / bsz * (bsz * d * gamma[j] - sum_d[j] - c.xhat[i] * sum_dx[j])
            })
            .collect()
    } else {
        dy.iter().enumerate().map(|(i, &d)| d * gamma[i % width] * c.inv_std[i % width]).collect()
    }
}

fn pad_rows(x: &[f64], cols: usize, pad: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len() + 2 * pad * cols];
    out[pad * cols..pad * cols + x.len()].copy_from_slice(x);
    out
}

/// Convolution stack plus global average pooling for one sample.
fn local_forward(cfg: &ModelConfig, layout: &Layout, p: &[Vec<f64>], x: Vec<f64>, keep: bool) -> (Vec<f64>, Option<LocalTrace>) {
    let m = cfg.local_frames;
    let k = cfg.kernel_size;
    let pad = k / 2;
    let mut c_in = cfg.local_coeffs;
    let mut padded = pad_rows(&x, c_in, pad);
    let mut trace = LocalTrace {
        padded: Vec::new(),
        pre: Vec::new(),
    };
    for (l, &(wi, bi)) in layout.conv.iter().enumerate() {
        let c_out = cfg.conv_channels[l];
        let span = k * c_in;
        let (w, b) = (&p[wi], &p[bi]);
        let mut z = vec![0.0; m * c_out];
        for t in 0..m {
            let window = &padded[t * c_in..t * c_in + span];
            for o in 0..c_out {
                z[t * c_out + o] = b[o] + dot(&w[o * span..(o + 1) * span], window);
            }
        }
        let next = pad_rows(&relu(&z), c_out, pad);
        if keep {
            trace.padded.push(std::mem::replace(&mut padded, next));
            trace.pre.push(z);
        } else {
            padded = next;
        }
        c_in = c_out;
    }
    let mut pooled = vec![0.0; c_in];
    for row in padded[pad * c_in..(pad + m) * c_in].chunks_exact(c_in) {
        axpy(&mut pooled, 1.0, row);
    }
    pooled.iter_mut().for_each(|v| *v /= m as f64);
    (pooled, keep.then_some(trace))
}

/// Gradients of the convolution tensors for one sample, ordered
/// `[w0, b0, w1, b1, ...]`.
fn local_backward(cfg: &ModelConfig, layout: &Layout, p: &[Vec<f64>], trace: &LocalTrace, dpooled: &[f64]) -> Vec<Vec<f64>> {
    let m = cfg.local_frames;
    let k = cfg.kernel_size;
    let pad = k / 2;
    let n_layers = layout.conv.len();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(2 * n_layers);
    for l in 0..n_layers {
        let c_in = if l == 0 { cfg.local_coeffs } else { cfg.conv_channels[l - 1] };
        let c_out = cfg.conv_channels[l];
        out.push(vec![0.0; c_out * k * c_in]);
        out.push(vec![0.0; c_out]);
    }
    let c_last = cfg.conv_channels[n_layers - 1];
    let mut da: Vec<f64> = (0..m * c_last).map(|i| dpooled[i % c_last] / m as f64).collect();
    for l in (0..n_layers).rev() {
        let c_in = if l == 0 { cfg.local_coeffs } else { cfg.conv_channels[l - 1] };
        let c_out = cfg.conv_channels[l];
        let span = k * c_in;
        let w = &p[layout.conv[l].0];
        let (z, input) = (&trace.pre[l], &trace.padded[l]);
        let need_dx = l > 0;
        let mut dpad = if need_dx { vec![0.0; (m + 2 * pad) * c_in] } else { Vec::new() };
        let (gw, gb) = {
            let (a, b) = out.split_at_mut(2 * l + 1);
            (&mut a[2 * l], &mut b[0])
        };
        for t in 0..m {
            let window = &input[t * c_in..t * c_in + span];
            for o in 0..c_out {
                let idx = t * c_out + o;
                if z[idx] <= 0.0 || da[idx] == 0.0 {
                    continue;
                }
                let dz = da[idx];
                gb[o] += dz;
                axpy(&mut gw[o * span..(o + 1) * span], dz, window);
                if need_dx {
                    axpy(&mut dpad[t * c_in..t * c_in + span], dz, &w[o * span..(o + 1) * span]);
                }
            }
        }
        if need_dx {
            da = dpad[pad * c_in..(pad + m) * c_in].to_vec();
        }
    }
    out
}
