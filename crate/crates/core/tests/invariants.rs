//! Cross-module properties on random input.

use proptest::prelude::*;
use vehicle_acoustics::audio::{decode_wav_bytes, encode_wav_bytes, AudioClip};
use vehicle_acoustics::dsp::{istft, stft_samples, StftConfig};
use vehicle_acoustics::features::{global_feature_vector, magnitude_spectrum, FeatureConfig, FeatureExtractor, FeatureKind};

fn samples(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 1..max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_clip_normalizes_to_canonical_length(x in samples(80_000), rate in prop::sample::select(vec![8_000u32, 16_000, 22_050, 44_100])) {
        let clip = AudioClip::new(x, rate).unwrap();
        let c = clip.canonical().unwrap();
        prop_assert_eq!(c.len(), 66_150);
        prop_assert_eq!(c.sample_rate(), 22_050);
    }

    #[test]
    fn stft_frame_count_and_inverse(x in samples(6_000)) {
        let cfg = StftConfig { window_size: 256, hop_size: 64, fft_size: 256, ..StftConfig::default() };
        prop_assume!(x.len() > 128);
        let spec = stft_samples(&x, &cfg).unwrap();
        prop_assert_eq!(spec.n_frames(), 1 + x.len() / 64);
        let back = istft(&spec, &cfg, x.len()).unwrap();
        for (a, b) in x.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn features_are_finite_for_any_clip(x in samples(30_000), kind in prop::sample::select(vec![FeatureKind::MelSpectrogram, FeatureKind::Mfcc, FeatureKind::Gfcc])) {
        let clip = AudioClip::new(x, 22_050).unwrap();
        let fx = FeatureExtractor::new(FeatureConfig::with_kind(kind)).unwrap();
        let set = fx.extract(&clip).unwrap();
        prop_assert!(set.local.is_finite());
        prop_assert_eq!(set.local.rows(), 130);
        prop_assert!(set.global.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn global_features_finite_on_any_spectrum(x in samples(4_000)) {
        let clip = AudioClip::new(x, 22_050).unwrap();
        let g = global_feature_vector(&magnitude_spectrum(&clip)).unwrap();
        prop_assert!(g.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn wav_roundtrip_within_one_lsb(x in samples(2_000)) {
        let clip = AudioClip::new(x, 22_050).unwrap();
        let back = decode_wav_bytes(&encode_wav_bytes(&clip)).unwrap();
        prop_assert_eq!(back.len(), clip.len());
        for (a, b) in clip.samples().iter().zip(back.samples()) {
            prop_assert!((a - b).abs() <= 1.0 / 32_768.0);
        }
    }
}
