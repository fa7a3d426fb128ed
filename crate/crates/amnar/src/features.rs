//! Binary feature files: `"AMNF"`, a `u16` version, `u32` frame count and
//! `u32` dimension, then row-major little-endian `f32` values.

use std::path::Path;

use amnar_core::dataset::FeatureMatrix;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"AMNF";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 14;

/// A malformed feature payload, located by byte offset.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("byte offset {offset}: {message}")]
pub struct DecodeError {
    pub offset: u64,
    pub message: String,
}

fn decode_error(offset: usize, message: impl Into<String>) -> DecodeError {
    DecodeError { offset: offset as u64, message: message.into() }
}

/// Serializes `m`, narrowing values to `f32`. Fails if the matrix is too
/// large for the header or a value overflows `f32`.
pub fn encode_features(m: &FeatureMatrix) -> Result<Vec<u8>, DecodeError> {
    let frames = u32::try_from(m.frames()).map_err(|_| decode_error(6, "frame count exceeds u32"))?;
    let dim = u32::try_from(m.dim()).map_err(|_| decode_error(10, "dimension exceeds u32"))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.values().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&frames.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    for &v in m.values() {
        let narrowed = v as f32;
        if !narrowed.is_finite() {
            return Err(decode_error(out.len(), format!("value {v} is not representable as f32")));
        }
        out.extend_from_slice(&narrowed.to_le_bytes());
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("four bytes"))
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMatrix, DecodeError> {
    if bytes.len() < HEADER_LEN {
        return Err(decode_error(bytes.len(), format!("truncated header: {} of {HEADER_LEN} bytes", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(decode_error(0, format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4]))));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(decode_error(4, format!("unsupported version {version}")));
    }
    let frames = read_u32(bytes, 6) as usize;
    let dim = read_u32(bytes, 10) as usize;
    let expected = frames
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| decode_error(6, "header size overflows"))?;
    if bytes.len() < expected {
        return Err(decode_error(bytes.len(), format!("truncated payload: expected {expected} bytes")));
    }
    if bytes.len() > expected {
        return Err(decode_error(expected, format!("{} trailing bytes", bytes.len() - expected)));
    }
    let mut values = Vec::with_capacity(frames * dim);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("four bytes"));
        if !v.is_finite() {
            return Err(decode_error(HEADER_LEN + 4 * i, format!("non-finite value {v}")));
        }
        values.push(f64::from(v));
    }
    FeatureMatrix::from_flat(frames, dim, values).map_err(|e| decode_error(HEADER_LEN, e.to_string()))
}

pub fn save_features(path: &Path, m: &FeatureMatrix) -> Result<()> {
    let bytes = encode_features(m).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        offset: e.offset,
        message: e.message,
    })?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_features(path: &Path) -> Result<FeatureMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        offset: e.offset,
        message: e.message,
    })
}
