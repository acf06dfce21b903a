//! Middlebury `.flo` interchange format.
//!
//! Layout, all little-endian: `f32` magic 202021.25, `i32` width, `i32`
//! height, then `height * width` interleaved `(u, v)` `f32` pairs in
//! row-major order.

use std::path::Path;

use ndarray::Array2;

use super::FlowField;
use crate::error::{Error, Result};
use crate::media::ensure_parent;

pub const FLO_MAGIC: f32 = 202021.25;
const HEADER_LEN: usize = 12;

/// Serializes a flow field to `.flo` bytes.
pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let (h, w) = flow.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + h * w * 8);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for (a, b) in flow.u.iter().zip(flow.v.iter()) {
        out.extend_from_slice(&a.to_le_bytes());
        out.extend_from_slice(&b.to_le_bytes());
    }
    out
}

/// Parses `.flo` bytes; `origin` is only used in error messages.
pub fn decode_flo(bytes: &[u8], origin: &Path) -> Result<FlowField> {
    let truncated = |expected| Error::TruncatedFile {
        path: origin.to_path_buf(),
        expected,
        actual: bytes.len(),
    };
    if bytes.len() < 4 {
        return Err(truncated(HEADER_LEN));
    }
    let magic = f32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if magic != FLO_MAGIC {
        return Err(Error::BadMagic {
            path: origin.to_path_buf(),
            found: magic,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated(HEADER_LEN));
    }
    let w = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let h = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if w <= 0 || h <= 0 {
        return Err(Error::InvalidDimensions(format!(
            "{}: header declares {w}x{h}",
            origin.display()
        )));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = HEADER_LEN + w * h * 8;
    if bytes.len() < expected {
        return Err(truncated(expected));
    }
    if bytes.len() > expected {
        return Err(Error::InvalidDimensions(format!(
            "{}: {} trailing bytes after {w}x{h} payload",
            origin.display(),
            bytes.len() - expected
        )));
    }
    let payload = &bytes[HEADER_LEN..];
    let read = |i: usize| f32::from_le_bytes(payload[4 * i..4 * i + 4].try_into().unwrap());
    let u = Array2::from_shape_fn((h, w), |(y, x)| read(2 * (y * w + x)));
    let v = Array2::from_shape_fn((h, w), |(y, x)| read(2 * (y * w + x) + 1));
    FlowField::new(u, v)
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flo(&bytes, path)
}

pub fn write_flo(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    // crate-internal constructors skip FlowField::new
    for (((row, col), &a), &b) in flow.u.indexed_iter().zip(flow.v.iter()) {
        if !super::valid(a) || !super::valid(b) {
            return Err(Error::InvalidFlowValue { row, col });
        }
    }
    ensure_parent(path)?;
    std::fs::write(path, encode_flo(flow)).map_err(|e| Error::io(path, e))
}
