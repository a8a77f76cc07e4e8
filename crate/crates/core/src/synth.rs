//! Deterministic synthetic four-class corpus.
//!
//! Each clip is a harmonic tone (or band-limited noise) under a
//! rising-then-falling envelope, loosely imitating a vehicle driving past a
//! roadside microphone. The corpus uses the same WAV and manifest formats
//! as recorded data.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav, AudioClip, CANONICAL_SAMPLE_RATE, CANONICAL_SECONDS};
use crate::dataset::{DatasetManifest, Label, ManifestEntry};
use crate::dsp::{irfft, rfft};
use crate::error::{Error, Result};
use crate::train::stream_seed;

pub const MIN_SAMPLES_PER_CLASS: usize = 10;
pub const MANIFEST_NAME: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassRecipe {
    pub label: Label,
    /// Fundamental range in Hz, drawn uniformly per clip. `None` for
    /// noise-only classes.
    pub fundamental_hz: Option<(f64, f64)>,
    /// Harmonics including the fundamental; amplitude of harmonic h is 1/h.
    pub harmonics: usize,
    /// White-noise level relative to the tonal part.
    pub noise_floor: f64,
    /// Depth and rate range (Hz) of sinusoidal amplitude modulation.
    pub am_depth: f64,
    pub am_rate_hz: (f64, f64),
    /// Pass band of the shaped noise component, if any.
    pub noise_band_hz: Option<(f64, f64)>,
    /// Peak amplitude range, drawn log-uniformly per clip.
    pub peak_level: (f64, f64),
}

impl ClassRecipe {
    pub fn truck() -> Self {
        Self {
            label: Label::Truck,
            fundamental_hz: Some((80.0, 120.0)),
            harmonics: 8,
            noise_floor: 0.02,
            am_depth: 0.0,
            am_rate_hz: (0.0, 0.0),
            noise_band_hz: None,
            peak_level: (0.3, 0.9),
        }
    }

    pub fn car() -> Self {
        Self {
            label: Label::Car,
            fundamental_hz: Some((200.0, 300.0)),
            harmonics: 4,
            noise_floor: 0.05,
            ..Self::truck()
        }
    }

    pub fn motorcycle() -> Self {
        Self {
            label: Label::Motorcycle,
            fundamental_hz: Some((400.0, 600.0)),
            harmonics: 2,
            noise_floor: 0.05,
            am_depth: 0.6,
            am_rate_hz: (15.0, 30.0),
            noise_band_hz: None,
            peak_level: (0.3, 0.9),
        }
    }

    pub fn no_vehicle() -> Self {
        Self {
            label: Label::NoVehicle,
            fundamental_hz: None,
            harmonics: 0,
            noise_floor: 0.05,
            am_depth: 0.0,
            am_rate_hz: (0.0, 0.0),
            noise_band_hz: Some((2000.0, 5000.0)),
            // An empty road is often close to silent.
            peak_level: (3e-4, 0.3),
        }
    }

    fn validate(&self, nyquist: f64) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("{} recipe: {m}", self.label)));
        let range_ok = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi && hi < nyquist;
        match self.fundamental_hz {
            Some(r) if !range_ok(r) => return bad(format!("fundamental range {r:?} is not inside (0, {nyquist})")),
            Some(_) if self.harmonics == 0 => return bad("a fundamental needs at least one harmonic".into()),
            None if self.noise_band_hz.is_none() => return bad("needs a fundamental or a noise band".into()),
            _ => {}
        }
        if let Some(b) = self.noise_band_hz {
            if !range_ok(b) {
                return bad(format!("noise band {b:?} is not inside (0, {nyquist})"));
            }
        }
        let (lo, hi) = self.peak_level;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad(format!("peak level range {:?} must lie in (0, 1]", self.peak_level));
        }
        if !(0.0..=1.0).contains(&self.am_depth) || self.noise_floor < 0.0 {
            return bad("am_depth must lie in [0, 1] and noise_floor must be non-negative".into());
        }
        Ok(())
    }

    fn spectral_signature(&self) -> (Option<(u64, u64)>, usize, Option<(u64, u64)>, u64) {
        let bits = |r: Option<(f64, f64)>| r.map(|(a, b)| (a.to_bits(), b.to_bits()));
        (bits(self.fundamental_hz), self.harmonics, bits(self.noise_band_hz), self.am_depth.to_bits())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub recipes: Vec<ClassRecipe>,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            recipes: vec![ClassRecipe::car(), ClassRecipe::truck(), ClassRecipe::motorcycle(), ClassRecipe::no_vehicle()],
            samples_per_class: 100,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn with_samples(samples_per_class: usize, seed: u64) -> Self {
        Self {
            samples_per_class,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples_per_class < MIN_SAMPLES_PER_CLASS {
            return Err(Error::InvalidConfig(format!(
                "samples_per_class must be at least {MIN_SAMPLES_PER_CLASS}, got {}",
                self.samples_per_class
            )));
        }
        let nyquist = f64::from(CANONICAL_SAMPLE_RATE) / 2.0;
        for (i, r) in self.recipes.iter().enumerate() {
            r.validate(nyquist)?;
            for other in &self.recipes[..i] {
                if other.label == r.label {
                    return Err(Error::InvalidConfig(format!("two recipes for class {}", r.label)));
                }
                if other.spectral_signature() == r.spectral_signature() {
                    return Err(Error::InvalidConfig(format!(
                        "recipes for {} and {} are spectrally identical",
                        other.label, r.label
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Renders one canonical clip for `recipe` from its own RNG.
pub fn render_clip(recipe: &ClassRecipe, rng: &mut ChaCha8Rng) -> AudioClip {
    let sr = f64::from(CANONICAL_SAMPLE_RATE);
    let n = (sr * CANONICAL_SECONDS).round() as usize;
    let mut x = vec![0.0; n];

    if let Some((lo, hi)) = recipe.fundamental_hz {
        let f0 = rng.gen_range(lo..=hi);
        for h in 1..=recipe.harmonics {
            let f = f0 * h as f64;
            if f >= sr / 2.0 {
                break;
            }
            let phase = rng.gen_range(0.0..2.0 * PI);
            let amp = 1.0 / h as f64;
            for (i, v) in x.iter_mut().enumerate() {
                *v += amp * (2.0 * PI * f * i as f64 / sr + phase).sin();
            }
        }
        if recipe.am_depth > 0.0 {
            let (lo, hi) = recipe.am_rate_hz;
            let rate = if lo < hi { rng.gen_range(lo..hi) } else { lo };
            let phase = rng.gen_range(0.0..2.0 * PI);
            for (i, v) in x.iter_mut().enumerate() {
                *v *= 1.0 - recipe.am_depth * 0.5 * (1.0 + (2.0 * PI * rate * i as f64 / sr + phase).cos());
            }
        }
    }
    if let Some(band) = recipe.noise_band_hz {
        let shaped = band_noise(n, band, sr, rng);
        for (v, s) in x.iter_mut().zip(shaped) {
            *v += s;
        }
    }
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt().max(1e-12);
    for v in x.iter_mut() {
        *v += recipe.noise_floor * rms * rng.sample::<f64, _>(StandardNormal);
    }

    // Pass-by: a Gaussian bump whose centre and width vary per clip.
    let centre = rng.gen_range(0.35..0.65) * n as f64;
    let width = rng.gen_range(0.15..0.3) * n as f64;
    for (i, v) in x.iter_mut().enumerate() {
        let d = (i as f64 - centre) / width;
        *v *= 0.05 + (-0.5 * d * d).exp();
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let (lo, hi) = recipe.peak_level;
    let level = if lo < hi { (rng.gen_range(lo.ln()..hi.ln())).exp() } else { lo };
    for v in x.iter_mut() {
        *v *= level / peak;
    }
    AudioClip::new(x, CANONICAL_SAMPLE_RATE).expect("non-empty clip")
}

/// White noise restricted to `band` by zeroing FFT bins outside it,
/// scaled to unit RMS.
fn band_noise(n: usize, (lo, hi): (f64, f64), sr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let white: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let size = n.next_power_of_two();
    let mut spec = rfft(&white, size);
    for (k, c) in spec.iter_mut().enumerate() {
        let f = k as f64 * sr / size as f64;
        if f < lo || f > hi {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    let mut y = irfft(&spec, size);
    y.truncate(n);
    let rms = (y.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt().max(1e-12);
    y.iter_mut().for_each(|v| *v /= rms);
    y
}

/// Writes `samples_per_class` clips per recipe as `<label>_NNNN.wav` plus
/// `manifest.csv` into `out_dir`, and returns the manifest.
pub fn generate_corpus(spec: &SynthSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let jobs: Vec<(&ClassRecipe, usize)> = spec
        .recipes
        .iter()
        .flat_map(|r| (0..spec.samples_per_class).map(move |i| (r, i)))
        .collect();
    let entries = jobs
        .par_iter()
        .map(|&(recipe, i)| {
            let id = format!("{}_{i:04}", recipe.label);
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, &["synth", recipe.label.as_str(), &i.to_string()]));
            let path = out_dir.join(format!("{id}.wav"));
            write_wav(&path, &render_clip(recipe, &mut rng))?;
            Ok(ManifestEntry::original(id, path, recipe.label))
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest::new(entries)?;
    manifest.save(out_dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::load_wav;
    use crate::features::{global_feature_vector, magnitude_spectrum, GLOBAL_DIM};

    fn peak_hz(clip: &AudioClip) -> f64 {
        let mag = magnitude_spectrum(clip);
        let k = crate::nn::argmax(&mag);
        k as f64 * f64::from(clip.sample_rate()) / (2 * (mag.len() - 1)) as f64
    }

    #[test]
    fn writes_canonical_files_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_corpus(&SynthSpec::with_samples(25, 1), dir.path()).unwrap();
        assert_eq!(m.len(), 100);
        assert_eq!(m.class_counts(), [25; 4]);
        let wavs = std::fs::read_dir(dir.path()).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "wav")).count();
        assert_eq!(wavs, 100);
        let reloaded = DatasetManifest::load(dir.path().join(MANIFEST_NAME)).unwrap();
        assert_eq!(reloaded.len(), 100);
        for e in m.iter().step_by(7) {
            let clip = load_wav(&e.path).unwrap();
            assert_eq!(clip.len(), 66_150);
            assert_eq!(clip.sample_rate(), 22_050);
            assert_eq!(clip.canonical().unwrap(), clip);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let spec = SynthSpec::with_samples(10, 7);
        let ma = generate_corpus(&spec, a.path()).unwrap();
        generate_corpus(&spec, b.path()).unwrap();
        for e in ma.iter() {
            let name = e.path.file_name().unwrap();
            assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
        }
    }

    #[test]
    fn truck_and_background_peaks_are_far_apart() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truck = peak_hz(&render_clip(&ClassRecipe::truck(), &mut rng));
            let quiet = peak_hz(&render_clip(&ClassRecipe::no_vehicle(), &mut rng));
            assert!(quiet > 10.0 * truck, "truck {truck} Hz, background {quiet} Hz");
        }
    }

    #[test]
    fn background_separates_by_nearest_centroid_on_global_features() {
        let per_class = 100;
        let spec = SynthSpec::with_samples(per_class, 3);
        let mut feats: Vec<(usize, [f64; GLOBAL_DIM])> = Vec::new();
        for (c, recipe) in spec.recipes.iter().enumerate() {
            for i in 0..per_class {
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, &["test", &c.to_string(), &i.to_string()]));
                let clip = render_clip(recipe, &mut rng);
                feats.push((c, global_feature_vector(&magnitude_spectrum(&clip)).unwrap().values));
            }
        }
        // z-score each statistic so no single scale dominates the distance.
        let n = feats.len() as f64;
        let mut mean = [0.0; GLOBAL_DIM];
        let mut std = [0.0; GLOBAL_DIM];
        for (_, v) in &feats {
            for j in 0..GLOBAL_DIM {
                mean[j] += v[j] / n;
            }
        }
        for (_, v) in &feats {
            for j in 0..GLOBAL_DIM {
                std[j] += (v[j] - mean[j]).powi(2) / n;
            }
        }
        let z = |v: &[f64; GLOBAL_DIM]| -> Vec<f64> { (0..GLOBAL_DIM).map(|j| (v[j] - mean[j]) / std[j].sqrt().max(1e-12)).collect() };
        let background = spec.recipes.iter().position(|r| r.label == Label::NoVehicle).unwrap();
        let mut centroids = vec![vec![0.0; GLOBAL_DIM]; 2];
        for (c, v) in &feats {
            let k = usize::from(*c == background);
            for (acc, x) in centroids[k].iter_mut().zip(z(v)) {
                *acc += x;
            }
        }
        let counts = [3.0 * per_class as f64, per_class as f64];
        for (cent, cnt) in centroids.iter_mut().zip(counts) {
            cent.iter_mut().for_each(|x| *x /= cnt);
        }
        let correct = feats
            .iter()
            .filter(|(c, v)| {
                let zv = z(v);
                let d: Vec<f64> = centroids.iter().map(|cent| cent.iter().zip(&zv).map(|(a, b)| (a - b).powi(2)).sum()).collect();
                (d[1] < d[0]) == (*c == background)
            })
            .count();
        assert!(correct as f64 / n > 0.95, "{correct}/{n}");
    }

    #[test]
    fn spec_validation() {
        assert!(SynthSpec::with_samples(9, 0).validate().is_err());
        let mut dup = SynthSpec::default();
        dup.recipes[1] = ClassRecipe { label: Label::Truck, ..ClassRecipe::car() };
        assert!(dup.validate().is_err());
        let mut bad = SynthSpec::default();
        bad.recipes[0].fundamental_hz = Some((300.0, 200.0));
        assert!(bad.validate().is_err());
        assert!(SynthSpec::default().validate().is_ok());
    }
}
