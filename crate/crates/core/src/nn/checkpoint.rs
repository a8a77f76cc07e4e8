//! Binary checkpoint format.
//!
//! ```text
//! "VACK" | version u32 | config (u32 length + JSON) | metadata (u32 length + UTF-8)
//! adam step u64 | 4 standardization vectors (u32 length + f32s)
//! tensor count u32 | per tensor: name (u16 length + UTF-8), ndim u8, dims u32..., f32 data,
//!                    and for trainable tensors the Adam m and v arrays
//! SHA-256 of everything above (32 bytes)
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::model::{Model, ModelConfig, Standardization};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"VACK";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.bytes(&MAGIC);
    w.u32(FORMAT_VERSION);
    w.blob(&serde_json::to_vec(model.config()).expect("config serializes"));
    w.blob(model.metadata().as_bytes());
    w.0.extend_from_slice(&model.step().to_le_bytes());
    let s = model.standardization();
    for v in [&s.global_mean, &s.global_std, &s.local_mean, &s.local_std] {
        w.u32(v.len() as u32);
        w.floats(v);
    }
    w.u32(model.tensors().len() as u32);
    for (t, (m, v)) in model.tensors().iter().zip(model.moments()) {
        w.0.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        w.bytes(t.name.as_bytes());
        w.0.push(t.shape.len() as u8);
        for &d in &t.shape {
            w.u32(d as u32);
        }
        w.floats(&t.data);
        if t.trainable {
            w.floats(m);
            w.floats(v);
        }
    }
    let digest = Sha256::digest(&w.0);
    w.bytes(&digest);
    w.0
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < DIGEST_LEN {
        return Err(Error::ChecksumMismatch);
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::ChecksumMismatch);
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::VersionUnsupported("not a model checkpoint".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionUnsupported(format!("checkpoint format {version}, expected {FORMAT_VERSION}")));
    }
    let config: ModelConfig = serde_json::from_slice(r.blob()?)
        .map_err(|e| Error::VersionUnsupported(format!("unreadable model config: {e}")))?;
    let metadata = String::from_utf8(r.blob()?.to_vec()).map_err(|_| malformed("metadata is not UTF-8"))?;
    let step = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let mut vectors = Vec::with_capacity(4);
    for _ in 0..4 {
        let n = r.u32()? as usize;
        vectors.push(r.floats(n)?);
    }
    let local_std = vectors.pop().unwrap();
    let local_mean = vectors.pop().unwrap();
    let global_std = vectors.pop().unwrap();
    let global_mean = vectors.pop().unwrap();

    let mut model = Model::skeleton(config)?;
    model.set_standardization(Standardization {
        global_mean,
        global_std,
        local_mean,
        local_std,
    })?;
    model.set_metadata(metadata);
    let template = model.tensors().to_vec();
    let count = r.u32()? as usize;
    if count != template.len() {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint has {count} tensors, config implies {}",
            template.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    let mut moments = Vec::with_capacity(count);
    for mut t in template {
        let name_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| malformed("tensor name is not UTF-8"))?;
        let ndim = r.take(1)?[0] as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if name != t.name || shape != t.shape {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint tensor {name} {shape:?} does not match expected {} {:?}",
                t.name, t.shape
            )));
        }
        t.data = r.floats(t.len())?;
        moments.push(if t.trainable { (r.floats(t.len())?, r.floats(t.len())?) } else { (Vec::new(), Vec::new()) });
        tensors.push(t);
    }
    if r.pos != body.len() {
        return Err(malformed("trailing bytes after the last tensor"));
    }
    model.restore_state(tensors, moments, step);
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Loads a checkpoint and insists it was written for `expected`.
pub fn load_checkpoint_expecting(path: &Path, expected: &ModelConfig) -> Result<Model> {
    let model = load_checkpoint(path)?;
    if model.config() != expected {
        return Err(Error::ShapeMismatch("checkpoint was written for a different model config".into()));
    }
    Ok(model)
}

fn malformed(msg: &str) -> Error {
    Error::VersionUnsupported(format!("malformed checkpoint: {msg}"))
}

struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }

    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn blob(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.bytes(b);
    }

    fn floats(&mut self, v: &[f32]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| malformed("unexpected end of data"))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn blob(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| malformed("length overflow"))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{AdamConfig, Example, Pass};

    fn small() -> ModelConfig {
        ModelConfig {
            local_frames: 5,
            local_coeffs: 3,
            conv_channels: vec![4],
            global_hidden: 6,
            head_hidden: 7,
            batch_norm: true,
            ..ModelConfig::default()
        }
    }

    fn trained() -> (Model, Vec<Example>) {
        let cfg = small();
        let mut model = Model::new(cfg.clone()).unwrap();
        let batch: Vec<Example> = (0..4)
            .map(|i| Example {
                local: (0..15).map(|j| ((i * 15 + j) as f64).sin()).collect(),
                global: (0..13).map(|j| ((i + j) as f64).cos() * 100.0).collect(),
                label: i % 4,
            })
            .collect();
        model.set_standardization(Standardization::fit(&cfg, &batch).unwrap()).unwrap();
        model.set_metadata("{\"kind\":\"gfcc\"}");
        for s in 0..3 {
            let (_, g) = model.loss_and_gradients(&batch, Pass::Train { seed: s }).unwrap();
            model.adam_step(&g, 0.01, &AdamConfig::default()).unwrap();
        }
        (model, batch)
    }

    #[test]
    fn round_trip_is_exact() {
        let (model, batch) = trained();
        let back = decode_checkpoint(&encode_checkpoint(&model)).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.predict_batch(&batch).unwrap(), model.predict_batch(&batch).unwrap());
        assert_eq!(back.step(), 3);
    }

    #[test]
    fn file_round_trip() {
        let (model, _) = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), model);
        assert!(load_checkpoint_expecting(&path, model.config()).is_ok());
        assert!(matches!(load_checkpoint_expecting(&path, &ModelConfig::default()), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn truncation_and_corruption_are_detected() {
        let (model, _) = trained();
        let bytes = encode_checkpoint(&model);
        for cut in [0, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::ChecksumMismatch)));
        }
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(decode_checkpoint(&flipped), Err(Error::ChecksumMismatch)));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let (model, _) = trained();
        let mut bytes = encode_checkpoint(&model);
        bytes.truncate(bytes.len() - DIGEST_LEN);
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        let digest = Sha256::digest(&bytes);
        bytes.extend_from_slice(&digest);
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::VersionUnsupported(_))));
    }

    #[test]
    fn tensors_from_a_different_config_are_rejected() {
        // Splice the config block of one model onto the tensors of another.
        let a = Model::new(small()).unwrap();
        let b = Model::new(ModelConfig { head_hidden: 9, ..small() }).unwrap();
        let (ea, eb) = (encode_checkpoint(&a), encode_checkpoint(&b));
        let cfg_end = |bytes: &[u8]| 12 + u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let mut spliced = ea[..cfg_end(&ea)].to_vec();
        spliced.extend_from_slice(&eb[cfg_end(&eb)..eb.len() - DIGEST_LEN]);
        let digest = Sha256::digest(&spliced);
        spliced.extend_from_slice(&digest);
        assert!(matches!(decode_checkpoint(&spliced), Err(Error::ShapeMismatch(_))));
    }
}
