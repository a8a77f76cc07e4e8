//! Short-time Fourier analysis and synthesis.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan_forward(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

fn plan_inverse(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n))
}

/// Complex forward DFT, in place, unnormalized.
pub fn fft_in_place(buf: &mut [Complex64]) {
    plan_forward(buf.len()).process(buf);
}

/// One-sided spectrum (`n / 2 + 1` bins) of `signal` zero-padded to `n`.
///
/// # Panics
///
/// If `signal` is longer than `n`.
pub fn rfft(signal: &[f64], n: usize) -> Vec<Complex64> {
    assert!(signal.len() <= n, "signal longer than transform size");
    let mut buf: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    fft_in_place(&mut buf);
    buf.truncate(n / 2 + 1);
    buf
}

/// Real inverse of a one-sided spectrum of a length-`n` real signal,
/// normalized so that `irfft(rfft(x, n), n) == x`.
pub fn irfft(half: &[Complex64], n: usize) -> Vec<f64> {
    assert_eq!(half.len(), n / 2 + 1, "one-sided spectrum length");
    let mut full = vec![Complex64::new(0.0, 0.0); n];
    full[..half.len()].copy_from_slice(half);
    for k in 1..n.div_ceil(2) {
        full[n - k] = half[k].conj();
    }
    plan_inverse(n).process(&mut full);
    let scale = 1.0 / n as f64;
    full.iter().map(|c| c.re * scale).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Hann,
}

impl WindowKind {
    pub fn build(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => hann_window(len),
        }
    }
}

/// Periodic Hann window (the DFT-even form used for spectral analysis).
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_size: usize,
    pub hop_size: usize,
    pub fft_size: usize,
    pub window_kind: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_size: 1024,
            hop_size: 512,
            fft_size: 2048,
            window_kind: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 || self.window_size > self.fft_size {
            return Err(Error::InvalidConfig(format!(
                "window size {} must be in 1..={}",
                self.window_size, self.fft_size
            )));
        }
        if self.hop_size == 0 || self.hop_size > self.window_size {
            return Err(Error::InvalidConfig(format!(
                "hop size {} must be in 1..={}",
                self.hop_size, self.window_size
            )));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "FFT size {} is not a power of two",
                self.fft_size
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frames produced by centered framing of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        1 + len / self.hop_size
    }
}

/// Row-major complex STFT: one row per frame, `fft_size / 2 + 1` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    n_frames: usize,
    n_bins: usize,
    data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn from_frames(n_bins: usize, data: Vec<Complex64>) -> Self {
        assert_eq!(data.len() % n_bins, 0);
        Self {
            n_frames: data.len() / n_bins,
            n_bins,
            data,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[Complex64]> {
        self.data.chunks_exact(self.n_bins)
    }

    /// `|X|^2`, row-major with the same layout.
    pub fn power(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm_sqr()).collect()
    }
}

/// Index into a signal extended by mirror reflection (edge sample not repeated).
fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Centered STFT: the signal is reflection-padded by `window_size / 2` on each
/// side, frame `t` starts at padded offset `t * hop`, each frame is windowed
/// and zero-padded to `fft_size`.
pub fn stft(clip: &AudioClip, cfg: &StftConfig) -> Result<Spectrogram> {
    stft_samples(clip.samples(), cfg)
}

pub fn stft_samples(samples: &[f64], cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::ClipTooShort { len: 0 });
    }
    let window = cfg.window_kind.build(cfg.window_size);
    let pad = (cfg.window_size / 2) as isize;
    let n_frames = cfg.frame_count(samples.len());
    let n_bins = cfg.n_bins();
    let fft = plan_forward(cfg.fft_size);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
    let mut data = Vec::with_capacity(n_frames * n_bins);
    for t in 0..n_frames {
        let start = (t * cfg.hop_size) as isize - pad;
        for (n, slot) in buf.iter_mut().enumerate() {
            *slot = if n < cfg.window_size {
                let x = samples[reflect_index(start + n as isize, samples.len())];
                Complex64::new(x * window[n], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..n_bins]);
    }
    Ok(Spectrogram {
        n_frames,
        n_bins,
        data,
    })
}

/// Inverse of [`stft_samples`] by weighted overlap-add, trimmed to `length`.
///
/// Requires `window_size == fft_size`; the synthesis window equals the
/// analysis window and the overlap sum of squared windows is divided out.
pub fn istft(spec: &Spectrogram, cfg: &StftConfig, length: usize) -> Result<Vec<f64>> {
    cfg.validate()?;
    if cfg.window_size != cfg.fft_size {
        return Err(Error::InvalidConfig(
            "inverse STFT requires window size == FFT size".into(),
        ));
    }
    if spec.n_bins() != cfg.n_bins() {
        return Err(Error::ShapeMismatch(format!(
            "spectrogram has {} bins, config expects {}",
            spec.n_bins(),
            cfg.n_bins()
        )));
    }
    let n = cfg.fft_size;
    let window = cfg.window_kind.build(n);
    let pad = n / 2;
    let total = (spec.n_frames().saturating_sub(1)) * cfg.hop_size + n;
    let mut out = vec![0.0; total];
    let mut norm = vec![0.0; total];
    for (t, frame) in spec.frames().enumerate() {
        let frame_time = irfft(frame, n);
        let offset = t * cfg.hop_size;
        for i in 0..n {
            out[offset + i] += frame_time[i] * window[i];
            norm[offset + i] += window[i] * window[i];
        }
    }
    let floor = f64::EPSILON.sqrt();
    let mut result: Vec<f64> = out
        .iter()
        .zip(&norm)
        .skip(pad)
        .map(|(&y, &w)| if w > floor { y / w } else { y })
        .take(length)
        .collect();
    result.resize(length, 0.0);
    Ok(result)
}
