//! Whole-signal spectrum statistics.
//!
//! Thirteen statistics of the one-sided magnitude spectrum, treated as an
//! unordered multiset of values. The entry order is fixed and is part of the
//! checkpoint and feature-cache formats.

use crate::audio::AudioClip;
use crate::dsp::rfft;
use crate::error::{Error, Result};

pub const GLOBAL_DIM: usize = 13;

/// Floor applied before logarithms and reciprocals.
pub const VALUE_FLOOR: f64 = 1e-12;

const MODE_BINS: usize = 256;

pub const GLOBAL_FEATURE_NAMES: [&str; GLOBAL_DIM] = [
    "kurtosis",
    "skewness",
    "standard_deviation",
    "variance",
    "mode",
    "iqr",
    "mean",
    "geometric_mean",
    "harmonic_mean",
    "median_absolute_deviation",
    "variation",
    "geometric_standard_deviation",
    "entropy",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalFeatureVector {
    pub values: [f64; GLOBAL_DIM],
}

macro_rules! accessors {
    ($($name:ident = $idx:expr),* $(,)?) => {
        impl GlobalFeatureVector {
            $(pub fn $name(&self) -> f64 { self.values[$idx] })*
        }
    };
}

accessors! {
    kurtosis = 0,
    skewness = 1,
    standard_deviation = 2,
    variance = 3,
    mode = 4,
    iqr = 5,
    mean = 6,
    geometric_mean = 7,
    harmonic_mean = 8,
    median_absolute_deviation = 9,
    variation = 10,
    geometric_standard_deviation = 11,
    entropy = 12,
}

impl GlobalFeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Entries that are unchanged when the spectrum is multiplied by a constant.
    pub const SCALE_INVARIANT: [usize; 5] = [0, 1, 10, 11, 12];
    /// Entries that scale linearly with the spectrum.
    pub const SCALE_COVARIANT: [usize; 7] = [2, 4, 5, 6, 7, 8, 9];
}

/// One-sided magnitude of the whole clip zero-padded to the next power of two.
pub fn magnitude_spectrum(clip: &AudioClip) -> Vec<f64> {
    let n = clip.len().next_power_of_two();
    rfft(clip.samples(), n).iter().map(|c| c.norm()).collect()
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn histogram_mode(sorted: &[f64]) -> f64 {
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    if max == min {
        return min;
    }
    let width = (max - min) / MODE_BINS as f64;
    let mut counts = [0usize; MODE_BINS];
    for &v in sorted {
        let idx = (((v - min) / width) as usize).min(MODE_BINS - 1);
        counts[idx] += 1;
    }
    // Lowest index wins ties.
    let best = counts
        .iter()
        .enumerate()
        .fold((0, 0), |best, (i, &c)| if c > best.1 { (i, c) } else { best })
        .0;
    min + (best as f64 + 0.5) * width
}

/// Computes the 13 statistics over the spectrum values.
///
/// Kurtosis is Pearson's (a normal distribution gives 3); skewness and
/// kurtosis are 0 when the variance is 0. Variances are population
/// variances. Geometric statistics, the harmonic mean and the entropy use
/// values floored at [`VALUE_FLOOR`].
pub fn global_feature_vector(spectrum: &[f64]) -> Result<GlobalFeatureVector> {
    if spectrum.is_empty() {
        return Err(Error::DegenerateSpectrum("empty spectrum".into()));
    }
    if let Some(bad) = spectrum.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::DegenerateSpectrum(format!(
            "spectrum values must be finite and non-negative (found {bad})"
        )));
    }
    let n = spectrum.len() as f64;
    let mean = spectrum.iter().sum::<f64>() / n;
    let (m2, m3, m4) = spectrum.iter().fold((0.0, 0.0, 0.0), |(a, b, c), &v| {
        let d = v - mean;
        let d2 = d * d;
        (a + d2, b + d2 * d, c + d2 * d2)
    });
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    let variance = m2;
    let std = variance.sqrt();
    let (skewness, kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2))
    } else {
        (0.0, 0.0)
    };

    let sorted = sorted_copy(spectrum);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let deviations = sorted_copy(&spectrum.iter().map(|v| (v - median).abs()).collect::<Vec<_>>());
    let mad = quantile_sorted(&deviations, 0.5);
    let mode = histogram_mode(&sorted);

    let floored: Vec<f64> = spectrum.iter().map(|v| v.max(VALUE_FLOOR)).collect();
    let logs: Vec<f64> = floored.iter().map(|v| v.ln()).collect();
    let log_mean = logs.iter().sum::<f64>() / n;
    let geometric_mean = log_mean.exp();
    let log_var = logs.iter().map(|l| (l - log_mean).powi(2)).sum::<f64>() / n;
    let geometric_std = log_var.sqrt().exp();
    let harmonic_mean = n / floored.iter().map(|v| 1.0 / v).sum::<f64>();

    let variation = if mean > 0.0 { std / mean } else { 0.0 };

    let total: f64 = floored.iter().sum();
    let entropy = -floored
        .iter()
        .map(|v| {
            let p = v / total;
            p * p.ln()
        })
        .sum::<f64>();
    let entropy = entropy.max(0.0);

    Ok(GlobalFeatureVector {
        values: [
            kurtosis,
            skewness,
            std,
            variance,
            mode,
            iqr,
            mean,
            geometric_mean,
            harmonic_mean,
            mad,
            variation,
            geometric_std,
            entropy,
        ],
    })
}
