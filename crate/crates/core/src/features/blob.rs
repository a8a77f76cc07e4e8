//! Flat binary feature blobs used by the on-disk feature cache.
//!
//! Layout (little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "VAFM"
//! 4       4     rows (u32)
//! 8       4     cols (u32)
//! 12      4     dtype tag (u32, 1 = f32)
//! 16      4*r*c local matrix, row-major f32
//! ...     4*13  global vector, f32, optional
//! ```

use super::{FeatureKind, FeatureSet, GlobalFeatureVector, LocalFeatureMatrix, GLOBAL_DIM};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"VAFM";
pub const DTYPE_F32: u32 = 1;
const HEADER_LEN: usize = 16;

/// Encodes a local matrix, optionally followed by the global vector.
pub fn encode(local: &LocalFeatureMatrix, global: Option<&GlobalFeatureVector>) -> Vec<u8> {
    let extra = if global.is_some() { GLOBAL_DIM } else { 0 };
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * (local.values().len() + extra));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(local.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(local.cols() as u32).to_le_bytes());
    out.extend_from_slice(&DTYPE_F32.to_le_bytes());
    for &v in local.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    if let Some(g) = global {
        for &v in &g.values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn encode_set(set: &FeatureSet) -> Vec<u8> {
    encode(&set.local, Some(&set.global))
}

/// Decodes a blob. The blob does not record the feature kind or hop, so the
/// caller supplies them.
pub fn decode(bytes: &[u8], kind: FeatureKind, frame_hop: usize) -> Result<(LocalFeatureMatrix, Option<GlobalFeatureVector>)> {
    let bad = |msg: &str| Error::ShapeMismatch(format!("feature blob: {msg}"));
    if bytes.len() < HEADER_LEN || bytes[..4] != MAGIC {
        return Err(bad("missing header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let (rows, cols, dtype) = (word(4) as usize, word(8) as usize, word(12));
    if dtype != DTYPE_F32 {
        return Err(bad(&format!("unknown dtype tag {dtype}")));
    }
    let local_bytes = 4 * rows * cols;
    let rest = bytes.len() - HEADER_LEN;
    let has_global = match rest.checked_sub(local_bytes) {
        Some(0) => false,
        Some(n) if n == 4 * GLOBAL_DIM => true,
        _ => return Err(bad("payload length does not match header")),
    };
    let floats = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())));
    let all: Vec<f64> = floats.collect();
    let local = LocalFeatureMatrix::new(rows, cols, all[..rows * cols].to_vec(), frame_hop, kind);
    let global = has_global.then(|| {
        let mut values = [0.0; GLOBAL_DIM];
        values.copy_from_slice(&all[rows * cols..]);
        GlobalFeatureVector { values }
    });
    Ok((local, global))
}

pub fn decode_set(bytes: &[u8], kind: FeatureKind, frame_hop: usize) -> Result<FeatureSet> {
    match decode(bytes, kind, frame_hop)? {
        (local, Some(global)) => Ok(FeatureSet { local, global }),
        (_, None) => Err(Error::ShapeMismatch("feature blob has no global vector".into())),
    }
}
