//! Audio clips: WAV I/O, canonicalization and pre-emphasis.
//!
//! Every downstream stage assumes the canonical form produced by
//! [`AudioClip::normalize`]: mono, [`CANONICAL_SAMPLE_RATE`] Hz, exactly
//! [`CANONICAL_SECONDS`] seconds.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Read, Seek, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const CANONICAL_SAMPLE_RATE: u32 = 22_050;
pub const CANONICAL_SECONDS: f64 = 3.0;
pub const DEFAULT_PRE_EMPHASIS: f64 = 0.97;

/// Mono PCM samples at a declared sample rate.
///
/// Amplitudes are nominally in `[-1, 1]` but are not clamped in memory; only
/// PCM16 export clamps.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    /// Builds a clip, rejecting empty sample buffers and a zero sample rate.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyClip);
        }
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Same sample rate, new samples. Used by transforms that preserve rate.
    pub(crate) fn with_samples(&self, samples: Vec<f64>) -> Self {
        debug_assert!(!samples.is_empty());
        Self {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    /// Resamples to `target_rate` and fixes the length at
    /// `round(target_rate * target_seconds)`.
    ///
    /// Short clips are zero-padded symmetrically (the odd zero goes at the
    /// end); long clips are center-cropped.
    pub fn normalize(&self, target_rate: u32, target_seconds: f64) -> Result<Self> {
        if target_rate == 0 || !(target_seconds > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "normalize target must be positive (rate {target_rate}, seconds {target_seconds})"
            )));
        }
        if self.samples.is_empty() {
            return Err(Error::EmptyClip);
        }
        let resampled = if self.sample_rate == target_rate {
            self.samples.clone()
        } else {
            resample_linear(&self.samples, self.sample_rate, target_rate)
        };
        let target_len = (f64::from(target_rate) * target_seconds).round() as usize;
        let samples = fit_length(resampled, target_len);
        Ok(Self {
            samples,
            sample_rate: target_rate,
        })
    }

    /// [`normalize`](Self::normalize) to 22,050 Hz / 3 s.
    pub fn canonical(&self) -> Result<Self> {
        self.normalize(CANONICAL_SAMPLE_RATE, CANONICAL_SECONDS)
    }

    /// First-order high-pass: `y[0] = x[0]`, `y[n] = x[n] - alpha * x[n-1]`.
    ///
    /// # Panics
    ///
    /// If `alpha` is outside `[0, 1)`.
    pub fn pre_emphasis(&self, alpha: f64) -> Self {
        assert!(
            (0.0..1.0).contains(&alpha),
            "pre-emphasis coefficient must lie in [0, 1), got {alpha}"
        );
        let x = &self.samples;
        let mut y = Vec::with_capacity(x.len());
        y.push(x[0]);
        y.extend(x.windows(2).map(|w| w[1] - alpha * w[0]));
        self.with_samples(y)
    }
}

fn resample_linear(samples: &[f64], from: u32, to: u32) -> Vec<f64> {
    let ratio = f64::from(from) / f64::from(to);
    let out_len = ((samples.len() as f64) / ratio).round().max(1.0) as usize;
    let last = samples.len() - 1;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let idx = pos.floor() as usize;
            if idx >= last {
                samples[last]
            } else {
                let frac = pos - idx as f64;
                samples[idx] * (1.0 - frac) + samples[idx + 1] * frac
            }
        })
        .collect()
}

fn fit_length(samples: Vec<f64>, target_len: usize) -> Vec<f64> {
    use std::cmp::Ordering;
    match samples.len().cmp(&target_len) {
        Ordering::Equal => samples,
        Ordering::Less => {
            let pad = target_len - samples.len();
            let lead = pad / 2;
            let mut out = vec![0.0; lead];
            out.extend_from_slice(&samples);
            out.resize(target_len, 0.0);
            out
        }
        Ordering::Greater => {
            let start = (samples.len() - target_len) / 2;
            samples[start..start + target_len].to_vec()
        }
    }
}

/// Reads a RIFF/WAVE file holding PCM16 or float32 samples, mono or stereo.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    decode_wav(BufReader::new(file))
}

/// Decodes WAV bytes already in memory (e.g. an HTTP request body).
pub fn decode_wav_bytes(bytes: &[u8]) -> Result<AudioClip> {
    decode_wav(Cursor::new(bytes))
}

fn decode_wav<R: Read>(reader: R) -> Result<AudioClip> {
    let reader = hound::WavReader::new(reader).map_err(map_hound_error)?;
    let spec = reader.spec();
    if !(1..=2).contains(&spec.channels) {
        return Err(Error::UnsupportedEncoding(format!(
            "{} channels (only mono and stereo are supported)",
            spec.channels
        )));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(map_hound_error)?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(map_hound_error)?,
        (format, bits) => {
            return Err(Error::UnsupportedEncoding(format!(
                "{bits}-bit {format:?} samples (expected 16-bit PCM or 32-bit float)"
            )))
        }
    };
    let samples = if spec.channels == 2 {
        if !interleaved.len().is_multiple_of(2) {
            return Err(Error::MalformedWav("odd sample count in stereo data".into()));
        }
        interleaved
            .chunks_exact(2)
            .map(|frame| 0.5 * (frame[0] + frame[1]))
            .collect()
    } else {
        interleaved
    };
    if spec.sample_rate == 0 {
        return Err(Error::MalformedWav("sample rate of zero".into()));
    }
    AudioClip::new(samples, spec.sample_rate)
}

fn map_hound_error(err: hound::Error) -> Error {
    match err {
        hound::Error::Unsupported => {
            Error::UnsupportedEncoding("compressed or non-PCM audio format".into())
        }
        hound::Error::IoError(e) => Error::MalformedWav(format!("truncated or unreadable data: {e}")),
        other => Error::MalformedWav(other.to_string()),
    }
}

/// Writes a mono PCM16 WAV. Samples are clamped to the representable range.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    encode_wav(BufWriter::new(file), clip).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::MalformedWav(other.to_string()),
    })
}

/// Encodes a clip as mono PCM16 WAV bytes.
pub fn encode_wav_bytes(clip: &AudioClip) -> Vec<u8> {
    let mut cursor = Cursor::new(Vec::new());
    encode_wav(&mut cursor, clip).expect("in-memory WAV encoding cannot fail");
    cursor.into_inner()
}

fn encode_wav<W: Write + Seek>(writer: W, clip: &AudioClip) -> hound::Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut wav = hound::WavWriter::new(writer, spec)?;
    {
        let mut samples = wav.get_i16_writer(clip.samples.len() as u32);
        for &s in &clip.samples {
            samples.write_sample(quantize_pcm16(s));
        }
        samples.flush()?;
    }
    wav.finalize()
}

pub(crate) fn quantize_pcm16(sample: f64) -> i16 {
    (sample * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(samples: Vec<f64>, rate: u32) -> AudioClip {
        AudioClip::new(samples, rate).unwrap()
    }

    fn pcm16_bytes(channels: u16, rate: u32, samples: &[i16]) -> Vec<u8> {
        let mut cursor = Cursor::new(Vec::new());
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::new(&mut cursor, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        cursor.into_inner()
    }

    #[test]
    fn pcm16_scaling() {
        let c = decode_wav_bytes(&pcm16_bytes(1, 22_050, &[16384, -32768, 0])).unwrap();
        assert_eq!(c.samples(), &[0.5, -1.0, 0.0]);
    }

    #[test]
    fn stereo_is_averaged() {
        // 0.2 and 0.4 are not exact in PCM16, so build them from integers.
        let a = 6554i16;
        let b = 13107i16;
        let c = decode_wav_bytes(&pcm16_bytes(2, 22_050, &[a, b])).unwrap();
        let expected = 0.5 * (f64::from(a) + f64::from(b)) / 32768.0;
        assert_eq!(c.samples(), &[expected]);
        assert!((c.samples()[0] - 0.3).abs() < 1e-4);
    }

    #[test]
    fn one_second_file_has_rate_samples() {
        let c = decode_wav_bytes(&pcm16_bytes(1, 22_050, &vec![0i16; 22_050])).unwrap();
        assert_eq!(c.len(), 22_050);
        assert_eq!(c.sample_rate(), 22_050);
    }

    #[test]
    fn float32_files_load() {
        let mut cursor = Cursor::new(Vec::new());
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::new(&mut cursor, spec).unwrap();
        w.write_sample(0.25f32).unwrap();
        w.write_sample(-0.75f32).unwrap();
        w.finalize().unwrap();
        let c = decode_wav_bytes(&cursor.into_inner()).unwrap();
        assert_eq!(c.samples(), &[0.25, -0.75]);
    }

    #[test]
    fn rejects_garbage_and_unsupported_depths() {
        assert!(matches!(
            decode_wav_bytes(b"definitely not a wav file"),
            Err(Error::MalformedWav(_))
        ));

        let mut cursor = Cursor::new(Vec::new());
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 24,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::new(&mut cursor, spec).unwrap();
        w.write_sample(1i32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(
            decode_wav_bytes(&cursor.into_inner()),
            Err(Error::UnsupportedEncoding(_))
        ));
    }

    #[test]
    fn truncated_data_chunk_is_malformed() {
        let mut bytes = pcm16_bytes(1, 22_050, &[1, 2, 3, 4, 5, 6]);
        bytes.truncate(bytes.len() - 5);
        assert!(matches!(
            decode_wav_bytes(&bytes),
            Err(Error::MalformedWav(_))
        ));
    }

    #[test]
    fn empty_data_is_an_empty_clip() {
        assert!(matches!(
            decode_wav_bytes(&pcm16_bytes(1, 22_050, &[])),
            Err(Error::EmptyClip)
        ));
    }

    #[test]
    fn normalize_pads_symmetrically() {
        let c = clip(vec![1.0; 22_050], 22_050).canonical().unwrap();
        assert_eq!(c.len(), 66_150);
        assert!(c.samples()[..22_050].iter().all(|&s| s == 0.0));
        assert!(c.samples()[22_050..44_100].iter().all(|&s| s == 1.0));
        assert!(c.samples()[44_100..].iter().all(|&s| s == 0.0));
    }

    #[test]
    fn normalize_odd_padding_puts_extra_zero_at_end() {
        let c = clip(vec![1.0; 3], 10).normalize(10, 0.6).unwrap();
        assert_eq!(c.samples(), &[0.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_identity_and_crop() {
        let samples: Vec<f64> = (0..66_150).map(|i| i as f64).collect();
        let c = clip(samples.clone(), 22_050);
        assert_eq!(c.canonical().unwrap(), c);

        let long: Vec<f64> = (0..88_200).map(|i| i as f64).collect();
        let cropped = clip(long, 22_050).canonical().unwrap();
        assert_eq!(cropped.samples()[0], 11_025.0);
        assert_eq!(*cropped.samples().last().unwrap(), 77_174.0);
    }

    #[test]
    fn normalize_resamples_linearly() {
        let c = clip(vec![0.0, 1.0, 2.0, 3.0], 4).normalize(8, 1.0).unwrap();
        assert_eq!(c.sample_rate(), 8);
        assert_eq!(c.samples(), &[0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.0]);
    }

    #[test]
    fn normalize_rejects_bad_targets() {
        let c = clip(vec![0.0], 8);
        assert!(c.normalize(0, 1.0).is_err());
        assert!(c.normalize(8, 0.0).is_err());
    }

    #[test]
    fn pre_emphasis_examples() {
        let y = clip(vec![1.0, 1.0, 1.0], 8).pre_emphasis(0.97);
        approx::assert_abs_diff_eq!(y.samples(), &[1.0, 0.03, 0.03][..], epsilon = 1e-15);
        let y = clip(vec![0.5, -0.5], 8).pre_emphasis(0.97);
        approx::assert_abs_diff_eq!(y.samples(), &[0.5, -0.985][..], epsilon = 1e-15);
        let x = clip(vec![0.3, -0.1, 0.7], 8);
        assert_eq!(x.pre_emphasis(0.0), x);
    }

    #[test]
    #[should_panic]
    fn pre_emphasis_rejects_alpha_of_one() {
        clip(vec![1.0], 8).pre_emphasis(1.0);
    }

    #[test]
    fn pcm16_export_clamps() {
        assert_eq!(quantize_pcm16(2.0), 32767);
        assert_eq!(quantize_pcm16(-2.0), -32768);
        assert_eq!(quantize_pcm16(0.5), 16384);
    }
}
