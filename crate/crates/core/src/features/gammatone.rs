//! Gammatone filters and GFCC.
//!
//! The filterbank weights the STFT power spectrum in the frequency domain
//! with the magnitude response of order-4 gammatone filters whose centers
//! are equally spaced on the ERB-rate scale.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::dct::DctBasis;
use super::{FeatureKind, FilterBank, LocalFeatureMatrix, LOG_FLOOR};
use crate::audio::AudioClip;
use crate::dsp::{stft, StftConfig};
use crate::error::{Error, Result};

/// Bandwidth factor relating the gammatone `b` to the ERB at `f_c`.
pub const BANDWIDTH_PER_ERB: f64 = 1.019;
pub const DEFAULT_F_MIN: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammatoneParams {
    pub order: u32,
    pub amplitude: f64,
    /// Hz.
    pub bandwidth: f64,
    /// Hz.
    pub center_frequency: f64,
    /// Radians.
    pub phase: f64,
}

impl GammatoneParams {
    /// Order-4 filter at `center_frequency` with `b = 1.019 * ERB(f_c)`.
    pub fn standard(center_frequency: f64) -> Self {
        Self {
            order: 4,
            amplitude: 1.0,
            bandwidth: BANDWIDTH_PER_ERB * erb(center_frequency),
            center_frequency,
            phase: 0.0,
        }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyquist = f64::from(sample_rate) / 2.0;
        if self.order < 1 || !(self.bandwidth > 0.0) {
            return Err(Error::InvalidConfig(
                "gammatone order must be >= 1 and bandwidth > 0".into(),
            ));
        }
        if !(self.center_frequency > 0.0 && self.center_frequency < nyquist) {
            return Err(Error::InvalidConfig(format!(
                "gammatone center {} Hz outside (0, {nyquist})",
                self.center_frequency
            )));
        }
        Ok(())
    }
}

/// `g(t) = a t^(n-1) exp(-2 pi b t) cos(2 pi f_c t + phi)` for `t >= 0` seconds.
pub fn gammatone_impulse_response(t: f64, p: &GammatoneParams) -> f64 {
    debug_assert!(t >= 0.0);
    p.amplitude
        * t.powi(p.order as i32 - 1)
        * (-2.0 * PI * p.bandwidth * t).exp()
        * (2.0 * PI * p.center_frequency * t + p.phase).cos()
}

/// Equivalent rectangular bandwidth in Hz.
pub fn erb(f: f64) -> f64 {
    24.7 * (4.37 * f / 1000.0 + 1.0)
}

/// ERB-rate (number of ERBs below `f`).
pub fn erb_rate(f: f64) -> f64 {
    21.4 * (4.37 * f / 1000.0 + 1.0).log10()
}

pub fn erb_rate_to_hz(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) * 1000.0 / 4.37
}

/// Magnitude response of an order-4 gammatone filter, normalized to 1 at
/// `f_c`: `|1 + j (f - f_c) / b|^-4`.
pub fn gammatone_weight(f: f64, center: f64, bandwidth: f64) -> f64 {
    let x = (f - center) / bandwidth;
    (1.0 + x * x).powi(-2)
}

/// `n_filters` centers equally spaced in ERB-rate from `f_min` (inclusive)
/// toward Nyquist (exclusive).
pub fn erb_space(f_min: f64, nyquist: f64, n_filters: usize) -> Vec<f64> {
    let (lo, hi) = (erb_rate(f_min), erb_rate(nyquist));
    (0..n_filters)
        .map(|i| erb_rate_to_hz(lo + (hi - lo) * i as f64 / n_filters as f64))
        .collect()
}

/// Shape `n_filters x (fft_size / 2 + 1)`; every row peaks at exactly 1.
pub fn gammatone_filterbank(fft_size: usize, sample_rate: u32, n_filters: usize, f_min: f64) -> Result<FilterBank> {
    let nyquist = f64::from(sample_rate) / 2.0;
    if n_filters == 0 {
        return Err(Error::InvalidConfig("need at least one gammatone filter".into()));
    }
    if !(f_min > 0.0 && f_min < nyquist) {
        // f_min = 0 would put a center at 0 Hz, outside the open band.
        return Err(Error::InvalidConfig(format!(
            "gammatone f_min {f_min} must lie in (0, {nyquist})"
        )));
    }
    let centers = erb_space(f_min, nyquist, n_filters);
    super::check_distinct_center_bins(&centers, fft_size, sample_rate, "gammatone")?;

    let n_bins = fft_size / 2 + 1;
    let bin_hz = f64::from(sample_rate) / fft_size as f64;
    let mut weights = Vec::with_capacity(n_filters * n_bins);
    for &fc in &centers {
        let params = GammatoneParams::standard(fc);
        params.validate(sample_rate)?;
        let row: Vec<f64> = (0..n_bins)
            .map(|k| gammatone_weight(k as f64 * bin_hz, fc, params.bandwidth))
            .collect();
        let peak = row.iter().copied().fold(0.0, f64::max);
        weights.extend(row.into_iter().map(|w| w / peak));
    }
    Ok(FilterBank::new(n_filters, n_bins, weights))
}

/// Compression applied to gammatone band energies before the DCT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GfccCompression {
    /// `ln(max(E, 1e-10))`. A gain change shifts only coefficient 0.
    #[default]
    Log,
    /// `max(E, 1e-10)^(1/3)`. A gain change scales every coefficient.
    CubeRoot,
}

impl GfccCompression {
    pub fn apply(self, energy: f64) -> f64 {
        let e = energy.max(LOG_FLOOR);
        match self {
            GfccCompression::Log => e.ln(),
            GfccCompression::CubeRoot => e.cbrt(),
        }
    }
}

/// GFCC with the default 50 Hz lower edge and log compression.
pub fn gfcc(clip: &AudioClip, cfg: &StftConfig, n_filters: usize, n_coeffs: usize) -> Result<LocalFeatureMatrix> {
    gfcc_with(clip, cfg, n_filters, n_coeffs, DEFAULT_F_MIN, GfccCompression::default())
}

pub fn gfcc_with(
    clip: &AudioClip,
    cfg: &StftConfig,
    n_filters: usize,
    n_coeffs: usize,
    f_min: f64,
    compression: GfccCompression,
) -> Result<LocalFeatureMatrix> {
    if n_coeffs == 0 || n_coeffs > n_filters {
        return Err(Error::InvalidConfig(format!(
            "GFCC count {n_coeffs} must be in 1..={n_filters}"
        )));
    }
    let fb = gammatone_filterbank(cfg.fft_size, clip.sample_rate(), n_filters, f_min)?;
    gfcc_from_bank(clip, cfg, &fb, &DctBasis::new(n_filters), n_coeffs, compression)
}

pub(crate) fn gfcc_from_bank(
    clip: &AudioClip,
    cfg: &StftConfig,
    fb: &FilterBank,
    dct: &DctBasis,
    n_coeffs: usize,
    compression: GfccCompression,
) -> Result<LocalFeatureMatrix> {
    let spec = stft(clip, cfg)?;
    let power = spec.power();
    let mut values = Vec::with_capacity(spec.n_frames() * n_coeffs);
    for frame in power.chunks_exact(spec.n_bins()) {
        let compressed: Vec<f64> = fb.apply(frame).into_iter().map(|e| compression.apply(e)).collect();
        values.extend(dct.transform(&compressed, n_coeffs));
    }
    Ok(LocalFeatureMatrix::new(
        spec.n_frames(),
        n_coeffs,
        values,
        cfg.hop_size,
        FeatureKind::Gfcc,
    ))
}
