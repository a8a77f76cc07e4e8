//! Mel filterbank, log mel-spectrogram and MFCC.

use super::dct::DctBasis;
use super::{FeatureKind, FilterBank, LocalFeatureMatrix, LOG_FLOOR};
use crate::audio::AudioClip;
use crate::dsp::{stft, StftConfig};
use crate::error::{Error, Result};

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with centers equally spaced on the mel scale between
/// `f_min` and `f_max`. Shape `n_mels x (fft_size / 2 + 1)`, unnormalized
/// (each triangle peaks at 1 at its center frequency).
pub fn mel_filterbank(
    fft_size: usize,
    sample_rate: u32,
    n_mels: usize,
    f_min: f64,
    f_max: f64,
) -> Result<FilterBank> {
    let nyquist = f64::from(sample_rate) / 2.0;
    if n_mels == 0 {
        return Err(Error::InvalidConfig("n_mels must be positive".into()));
    }
    if !(f_min >= 0.0 && f_min < f_max && f_max <= nyquist) {
        return Err(Error::InvalidConfig(format!(
            "mel band edges must satisfy 0 <= f_min < f_max <= {nyquist} (got {f_min}, {f_max})"
        )));
    }
    let (mel_lo, mel_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let centers = &edges[1..=n_mels];
    super::check_distinct_center_bins(centers, fft_size, sample_rate, "mel")?;

    let n_bins = fft_size / 2 + 1;
    let bin_hz = f64::from(sample_rate) / fft_size as f64;
    let mut weights = vec![0.0; n_mels * n_bins];
    for m in 0..n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut weights[m * n_bins..(m + 1) * n_bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let rising = (f - lo) / (center - lo);
            let falling = (hi - f) / (hi - center);
            *w = rising.min(falling).max(0.0);
        }
        if row.iter().all(|&w| w <= 0.0) {
            return Err(Error::DegenerateBand(format!(
                "mel band {m} ({lo:.1}-{hi:.1} Hz) covers no FFT bin"
            )));
        }
    }
    Ok(FilterBank::new(n_mels, n_bins, weights))
}

/// Log mel-spectrogram: `ln(mel_fb * |X|^2 + 1e-10)`, shape `frames x n_mels`.
pub fn mel_spectrogram(clip: &AudioClip, cfg: &StftConfig, n_mels: usize) -> Result<LocalFeatureMatrix> {
    let fb = mel_filterbank(
        cfg.fft_size,
        clip.sample_rate(),
        n_mels,
        0.0,
        f64::from(clip.sample_rate()) / 2.0,
    )?;
    log_mel_with(clip, cfg, &fb)
}

pub(crate) fn log_mel_with(clip: &AudioClip, cfg: &StftConfig, fb: &FilterBank) -> Result<LocalFeatureMatrix> {
    let spec = stft(clip, cfg)?;
    let power = spec.power();
    let mut values = Vec::with_capacity(spec.n_frames() * fb.n_filters());
    for frame in power.chunks_exact(spec.n_bins()) {
        values.extend(fb.apply(frame).into_iter().map(|e| (e + LOG_FLOOR).ln()));
    }
    Ok(LocalFeatureMatrix::new(
        spec.n_frames(),
        fb.n_filters(),
        values,
        cfg.hop_size,
        FeatureKind::MelSpectrogram,
    ))
}

/// MFCC: orthonormal DCT-II of each log-mel frame, first `n_coeffs` kept.
pub fn mfcc(clip: &AudioClip, cfg: &StftConfig, n_mels: usize, n_coeffs: usize) -> Result<LocalFeatureMatrix> {
    if n_coeffs == 0 || n_coeffs > n_mels {
        return Err(Error::InvalidConfig(format!(
            "MFCC count {n_coeffs} must be in 1..={n_mels}"
        )));
    }
    let log_mel = mel_spectrogram(clip, cfg, n_mels)?;
    Ok(cepstrum(&log_mel, &DctBasis::new(n_mels), n_coeffs, FeatureKind::Mfcc))
}

pub(crate) fn cepstrum(
    bands: &LocalFeatureMatrix,
    dct: &DctBasis,
    n_coeffs: usize,
    kind: FeatureKind,
) -> LocalFeatureMatrix {
    let mut values = Vec::with_capacity(bands.rows() * n_coeffs);
    for row in bands.iter_rows() {
        values.extend(dct.transform(row, n_coeffs));
    }
    LocalFeatureMatrix::new(bands.rows(), n_coeffs, values, bands.frame_hop(), kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_reference_points() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        assert!((mel_to_hz(hz_to_mel(4321.0)) - 4321.0).abs() < 1e-9);
    }

    #[test]
    fn default_bank_shape_and_rows() {
        let fb = mel_filterbank(2048, 22_050, 128, 0.0, 11_025.0).unwrap();
        assert_eq!((fb.n_filters(), fb.n_bins()), (128, 1025));
        for m in 0..128 {
            let row = fb.row(m);
            assert!(row.iter().all(|&w| w >= 0.0 && w.is_finite()));
            assert!(row.iter().any(|&w| w > 0.0));
        }
    }

    #[test]
    fn too_many_bands_for_resolution_is_degenerate() {
        assert!(matches!(
            mel_filterbank(64, 22_050, 128, 0.0, 11_025.0),
            Err(Error::DegenerateBand(_))
        ));
    }

    #[test]
    fn bad_edges_are_rejected() {
        assert!(mel_filterbank(2048, 22_050, 10, 500.0, 400.0).is_err());
        assert!(mel_filterbank(2048, 22_050, 10, 0.0, 20_000.0).is_err());
    }

    #[test]
    fn silent_clip_is_log_floor_everywhere() {
        let clip = AudioClip::new(vec![0.0; 66_150], 22_050).unwrap();
        let m = mel_spectrogram(&clip, &StftConfig::default(), 128).unwrap();
        assert_eq!((m.rows(), m.cols()), (130, 128));
        assert!(m.values().iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn mfcc_rejects_too_many_coefficients() {
        let clip = AudioClip::new(vec![0.0; 4096], 22_050).unwrap();
        assert!(mfcc(&clip, &StftConfig::default(), 40, 41).is_err());
    }
}
