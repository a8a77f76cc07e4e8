//! Random gain, white-noise injection and pitch-preserving time stretching,
//! plus the corpus expansion that adds one variant of each per recording.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{load_wav, write_wav, AudioClip, CANONICAL_SAMPLE_RATE, CANONICAL_SECONDS};
use crate::dataset::{AugType, DatasetManifest, ManifestEntry};
use crate::dsp::{istft, stft_samples, Spectrogram, StftConfig, WindowKind};
use crate::error::{Error, Result};

/// Phase-vocoder analysis/synthesis frame.
pub const STRETCH_CONFIG: StftConfig = StftConfig {
    window_size: 2048,
    hop_size: 512,
    fft_size: 2048,
    window_kind: WindowKind::Hann,
};

/// `y = g * x`. No clipping: values may leave `[-1, 1]` until PCM16 export.
pub fn apply_gain(clip: &AudioClip, gain: f64) -> AudioClip {
    assert!(gain > 0.0, "gain must be positive, got {gain}");
    clip.with_samples(clip.samples().iter().map(|&x| x * gain).collect())
}

/// `y[n] = x[n] + rate * n[n]` with standard normal draws taken from `rng`
/// in sample order.
pub fn inject_noise<R: Rng + ?Sized>(clip: &AudioClip, rate: f64, rng: &mut R) -> AudioClip {
    assert!(rate >= 0.0, "noise rate must be non-negative, got {rate}");
    if rate == 0.0 {
        return clip.clone();
    }
    clip.with_samples(
        clip.samples()
            .iter()
            .map(|&x| {
                let n: f64 = rng.sample(StandardNormal);
                x + rate * n
            })
            .collect(),
    )
}

fn wrap_phase(p: f64) -> f64 {
    p - 2.0 * PI * (p / (2.0 * PI)).round()
}

/// Changes duration by `1 / factor` without moving spectral peaks.
///
/// Phase vocoder: the STFT is resampled at fractional frame positions
/// `0, factor, 2 * factor, ...`, magnitudes interpolated linearly between
/// neighbouring frames, phases accumulated from the measured per-bin phase
/// advance. Output length is `round(len / factor)`; the caller re-normalizes.
pub fn time_stretch(clip: &AudioClip, factor: f64) -> AudioClip {
    assert!(factor > 0.0, "stretch factor must be positive, got {factor}");
    let cfg = STRETCH_CONFIG;
    let spec = stft_samples(clip.samples(), &cfg).expect("non-empty clip with a valid config");
    let n_bins = spec.n_bins();
    let n_frames = spec.n_frames();
    let out_len = ((clip.len() as f64) / factor).round().max(1.0) as usize;

    let zero_frame = vec![Complex64::new(0.0, 0.0); n_bins];
    let frame = |i: usize| if i < n_frames { spec.frame(i) } else { &zero_frame[..] };
    let expected_advance: Vec<f64> = (0..n_bins)
        .map(|k| 2.0 * PI * k as f64 * cfg.hop_size as f64 / cfg.fft_size as f64)
        .collect();

    let mut phase: Vec<f64> = spec.frame(0).iter().map(|c| c.arg()).collect();
    let mut out = Vec::new();
    let mut step = 0usize;
    loop {
        let pos = step as f64 * factor;
        if pos >= n_frames as f64 {
            break;
        }
        let i = pos.floor() as usize;
        let alpha = pos - i as f64;
        let (a, b) = (frame(i), frame(i + 1));
        for k in 0..n_bins {
            let mag = (1.0 - alpha) * a[k].norm() + alpha * b[k].norm();
            out.push(Complex64::from_polar(mag, phase[k]));
            let deviation = wrap_phase(b[k].arg() - a[k].arg() - expected_advance[k]);
            phase[k] += expected_advance[k] + deviation;
        }
        step += 1;
    }
    let stretched = Spectrogram::from_frames(n_bins, out);
    let samples = istft(&stretched, &cfg, out_len).expect("config valid for synthesis");
    clip.with_samples(samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationParams {
    pub gain_min: f64,
    pub gain_max: f64,
    pub noise_rate_min: f64,
    pub noise_rate_max: f64,
    pub stretch_min: f64,
    pub stretch_max: f64,
    pub seed: u64,
}

impl Default for AugmentationParams {
    fn default() -> Self {
        Self {
            gain_min: 0.1,
            gain_max: 2.0,
            noise_rate_min: 0.001,
            noise_rate_max: 0.003,
            stretch_min: 0.8,
            stretch_max: 1.5,
            seed: 0,
        }
    }
}

impl AugmentationParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gain_min > 0.0
            && self.gain_min <= self.gain_max
            && self.noise_rate_min >= 0.0
            && self.noise_rate_min <= self.noise_rate_max
            && self.stretch_min > 0.0
            && self.stretch_min <= self.stretch_max
            && [self.gain_max, self.noise_rate_max, self.stretch_max].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid augmentation ranges: {self:?}")))
        }
    }

    fn range(&self, aug: AugType) -> (f64, f64) {
        match aug {
            AugType::Gain => (self.gain_min, self.gain_max),
            AugType::Noise => (self.noise_rate_min, self.noise_rate_max),
            AugType::Stretch => (self.stretch_min, self.stretch_max),
            AugType::None => (1.0, 1.0),
        }
    }
}

/// Deterministic per-(corpus seed, entry, augmentation) random stream.
pub fn entry_rng(seed: u64, entry_id: &str, aug: AugType) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(entry_id.as_bytes());
    h.update([0u8]);
    h.update(aug.as_str().as_bytes());
    let digest = h.finalize();
    ChaCha8Rng::seed_from_u64(u64::from_le_bytes(digest[..8].try_into().unwrap()))
}

/// Draws the augmentation parameter and applies it to a canonical clip.
/// Returns the canonical augmented clip and the drawn value.
pub fn augment_clip(clip: &AudioClip, aug: AugType, params: &AugmentationParams, entry_id: &str) -> Result<(AudioClip, f64)> {
    let mut rng = entry_rng(params.seed, entry_id, aug);
    let (lo, hi) = params.range(aug);
    let value = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
    let out = match aug {
        AugType::Gain => apply_gain(clip, value),
        AugType::Noise => inject_noise(clip, value, &mut rng),
        AugType::Stretch => time_stretch(clip, value),
        AugType::None => clip.clone(),
    };
    Ok((out.normalize(CANONICAL_SAMPLE_RATE, CANONICAL_SECONDS)?, value))
}

#[derive(Debug)]
pub struct AugmentOutcome {
    pub manifest: DatasetManifest,
    /// Originals that could not be processed; neither they nor any children
    /// appear in `manifest`.
    pub failures: Vec<(String, Error)>,
}

/// Adds a gain, a noise and a stretch variant of every original entry.
///
/// Augmented clips are written to `out_dir` as `<stem>__<aug>.wav`. Each
/// original is followed by its children in `gain, noise, stretch` order,
/// regardless of processing order.
pub fn augment_corpus(manifest: &DatasetManifest, params: &AugmentationParams, out_dir: &Path) -> Result<AugmentOutcome> {
    params.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut stems = HashSet::new();
    for e in manifest.iter().filter(|e| e.is_original()) {
        let stem = file_stem(&e.path);
        if !stems.insert(stem.clone()) {
            return Err(Error::Manifest(format!(
                "two originals share the file stem `{stem}`; augmented file names would collide"
            )));
        }
    }

    let results: Vec<Result<Vec<ManifestEntry>>> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            if !entry.is_original() {
                return Ok(vec![entry.clone()]);
            }
            let clip = load_wav(&entry.path)?.canonical()?;
            let mut group = vec![entry.clone()];
            for aug in AugType::AUGMENTATIONS {
                let (augmented, value) = augment_clip(&clip, aug, params, &entry.id)?;
                let path = out_dir.join(format!("{}__{}.wav", file_stem(&entry.path), aug));
                write_wav(&path, &augmented)?;
                group.push(ManifestEntry {
                    id: format!("{}__{}", entry.id, aug),
                    path,
                    label: entry.label,
                    parent_id: Some(entry.id.clone()),
                    aug_type: aug,
                    fold: entry.fold,
                    aug_param: Some(value),
                });
            }
            Ok(group)
        })
        .collect();

    let mut entries = Vec::with_capacity(manifest.len() * 4);
    let mut failures = Vec::new();
    let mut failed_ids = HashSet::new();
    for (entry, result) in manifest.entries.iter().zip(results) {
        match result {
            Ok(group) => entries.extend(group),
            Err(e) => {
                failed_ids.insert(entry.id.clone());
                failures.push((entry.id.clone(), e));
            }
        }
    }
    // Pre-existing children of a failed original would be orphans.
    entries.retain(|e| e.parent_id.as_ref().is_none_or(|p| !failed_ids.contains(p)));
    Ok(AugmentOutcome {
        manifest: DatasetManifest::new(entries)?,
        failures,
    })
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| PathBuf::from(path).to_string_lossy().into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::encode_wav_bytes;
    use crate::dataset::Label;
    use proptest::prelude::{any, prop_assert, proptest};

    fn sine(freq: f64, seconds: f64, rate: u32) -> AudioClip {
        let n = (seconds * f64::from(rate)).round() as usize;
        AudioClip::new(
            (0..n).map(|i| 0.5 * (2.0 * PI * freq * i as f64 / f64::from(rate)).sin()).collect(),
            rate,
        )
        .unwrap()
    }

    fn peak_frequency(clip: &AudioClip) -> (f64, f64) {
        let n = clip.len().next_power_of_two();
        let spec = crate::dsp::rfft(clip.samples(), n);
        let k = spec
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .unwrap()
            .0;
        let bin_hz = f64::from(clip.sample_rate()) / n as f64;
        (k as f64 * bin_hz, bin_hz)
    }

    #[test]
    fn gain_examples() {
        let c = AudioClip::new(vec![0.1, -0.2], 8).unwrap();
        assert_eq!(apply_gain(&c, 2.0).samples(), &[0.2, -0.4]);
        assert_eq!(apply_gain(&c, 1.0), c);
        let c = AudioClip::new(vec![0.5], 8).unwrap();
        assert!((apply_gain(&c, 0.1).samples()[0] - 0.05).abs() < 1e-16);
    }

    #[test]
    fn noise_examples() {
        let c = AudioClip::new(vec![0.3; 100], 8).unwrap();
        assert_eq!(inject_noise(&c, 0.0, &mut ChaCha8Rng::seed_from_u64(1)), c);

        let zeros = AudioClip::new(vec![0.0, 0.0], 8).unwrap();
        let y = inject_noise(&zeros, 1.0, &mut ChaCha8Rng::seed_from_u64(9));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        assert_eq!(y.samples(), &[a, b]);
    }

    #[test]
    fn noise_level_matches_rate() {
        let zeros = AudioClip::new(vec![0.0; 66_150], 22_050).unwrap();
        let y = inject_noise(&zeros, 0.003, &mut ChaCha8Rng::seed_from_u64(5));
        let n = y.len() as f64;
        let mean = y.samples().iter().sum::<f64>() / n;
        let std = (y.samples().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std / 0.003 - 1.0).abs() < 0.05, "std {std}");
    }

    #[test]
    fn unit_stretch_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = AudioClip::new((0..20_000).map(|_| rng.gen_range(-0.5..0.5)).collect(), 22_050).unwrap();
        let y = time_stretch(&c, 1.0);
        assert_eq!(y.len(), c.len());
        let rms = (c.samples().iter().zip(y.samples()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / c.len() as f64).sqrt();
        assert!(rms < 1e-3, "rms {rms}");
    }

    #[test]
    fn stretch_length_arithmetic() {
        let c = sine(440.0, 3.0, 22_050);
        let y = time_stretch(&c, 0.8);
        assert!((y.len() as i64 - 82_687).abs() <= 512);
        let y = time_stretch(&c, 1.5);
        assert_eq!(y.len(), 44_100);
    }

    #[test]
    fn stretch_keeps_pitch() {
        let c = sine(440.0, 3.0, 22_050);
        for factor in [0.8, 1.5] {
            let y = time_stretch(&c, factor);
            let (f, bin) = peak_frequency(&y);
            assert!((f - 440.0).abs() <= bin, "factor {factor}: peak {f} Hz (bin {bin} Hz)");
        }
    }

    #[test]
    fn gain_composes() {
        let c = AudioClip::new(vec![0.123, -0.77, 0.5], 8).unwrap();
        let ab = apply_gain(&c, 0.3 * 1.7);
        let a_then_b = apply_gain(&apply_gain(&c, 0.3), 1.7);
        for (x, y) in ab.samples().iter().zip(a_then_b.samples()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn drawn_parameters_stay_in_range(seed in any::<u64>(), id in "[a-z0-9]{1,12}") {
            let params = AugmentationParams { seed, ..AugmentationParams::default() };
            let clip = AudioClip::new(vec![0.0; 4096], 22_050).unwrap();
            for aug in [AugType::Gain, AugType::Noise] {
                let (_, v) = augment_clip(&clip, aug, &params, &id).unwrap();
                let (lo, hi) = params.range(aug);
                prop_assert!(v >= lo && v <= hi);
            }
            let mut rng = entry_rng(seed, &id, AugType::Stretch);
            let s = rng.gen_range(params.stretch_min..=params.stretch_max);
            prop_assert!((0.8..=1.5).contains(&s));
        }
    }

    #[test]
    fn corpus_expansion_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("src");
        std::fs::create_dir_all(&src).unwrap();
        let clip = sine(300.0, 1.0, 22_050);
        std::fs::write(src.join("rec1.wav"), encode_wav_bytes(&clip)).unwrap();
        let mut e = ManifestEntry::original("rec1", src.join("rec1.wav"), Label::Motorcycle);
        e.fold = Some(3);
        let manifest = DatasetManifest::new(vec![e]).unwrap();
        let params = AugmentationParams { seed: 42, ..Default::default() };

        let out1 = augment_corpus(&manifest, &params, &dir.path().join("a")).unwrap();
        assert!(out1.failures.is_empty());
        let kinds: Vec<AugType> = out1.manifest.iter().map(|e| e.aug_type).collect();
        assert_eq!(kinds, vec![AugType::None, AugType::Gain, AugType::Noise, AugType::Stretch]);
        for child in out1.manifest.iter().skip(1) {
            assert_eq!(child.label, Label::Motorcycle);
            assert_eq!(child.parent_id.as_deref(), Some("rec1"));
            assert_eq!(child.fold, Some(3));
            let loaded = load_wav(&child.path).unwrap();
            assert_eq!(loaded.len(), 66_150);
        }

        augment_corpus(&manifest, &params, &dir.path().join("b")).unwrap();
        for aug in ["gain", "noise", "stretch"] {
            let a = std::fs::read(dir.path().join(format!("a/rec1__{aug}.wav"))).unwrap();
            let b = std::fs::read(dir.path().join(format!("b/rec1__{aug}.wav"))).unwrap();
            assert_eq!(a, b, "{aug}");
        }
    }

    #[test]
    fn failing_entries_are_reported_and_skipped() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("ok.wav"), encode_wav_bytes(&sine(200.0, 0.5, 22_050))).unwrap();
        std::fs::write(dir.path().join("bad.wav"), b"garbage").unwrap();
        let manifest = DatasetManifest::new(vec![
            ManifestEntry::original("ok", dir.path().join("ok.wav"), Label::Car),
            ManifestEntry::original("bad", dir.path().join("bad.wav"), Label::Car),
        ])
        .unwrap();
        let out = augment_corpus(&manifest, &AugmentationParams::default(), &dir.path().join("out")).unwrap();
        assert_eq!(out.manifest.len(), 4);
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].0, "bad");
    }
}
