//! IDX files: `00 00 08 <ndims>`, big-endian u32 extents, then raw
//! unsigned bytes. Three-axis files `(N, H, W)` load as single-channel
//! images `[N, 1, H, W]`; saving reverses that convention.

use std::fs;
use std::path::Path;

use super::{byte_to_unit, unit_to_byte, DataError, Dataset};
use crate::atomic::write_atomic;
use crate::tensor::Tensor;

const UBYTE: u8 = 0x08;

fn parse(bytes: &[u8]) -> Result<(Vec<usize>, &[u8]), DataError> {
    if bytes.len() < 4 {
        return Err(DataError::Truncated { expected: 4, found: bytes.len() });
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(DataError::BadMagic([bytes[0], bytes[1]]));
    }
    if bytes[2] != UBYTE {
        return Err(DataError::UnsupportedDtype(bytes[2]));
    }
    let ndims = bytes[3] as usize;
    let header = 4 + 4 * ndims;
    if ndims == 0 {
        return Err(DataError::Invalid("IDX file with zero dimensions".into()));
    }
    if bytes.len() < header {
        return Err(DataError::Truncated { expected: header, found: bytes.len() });
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let payload = dims.iter().product::<usize>();
    let body = &bytes[header..];
    if body.len() < payload {
        return Err(DataError::Truncated { expected: header + payload, found: bytes.len() });
    }
    if body.len() > payload {
        return Err(DataError::Invalid(format!("{} trailing bytes after IDX payload", body.len() - payload)));
    }
    Ok((dims, body))
}

pub fn load_idx(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let bytes = fs::read(path)?;
    let (dims, body) = parse(&bytes)?;
    if dims.len() < 2 || dims.contains(&0) {
        return Err(DataError::Invalid(format!("IDX records need at least two non-empty axes, got {dims:?}")));
    }
    let mut shape = dims.clone();
    if dims.len() == 3 {
        shape.insert(1, 1);
    }
    let data = body.iter().map(|&b| byte_to_unit(b)).collect();
    Dataset::new(Tensor::new(shape, data)?, None)
}

/// One-axis IDX label file.
pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u32>, DataError> {
    let bytes = fs::read(path)?;
    let (dims, body) = parse(&bytes)?;
    if dims.len() != 1 {
        return Err(DataError::Invalid(format!("label file must have one axis, got {dims:?}")));
    }
    Ok(body.iter().map(|&b| b as u32).collect())
}

/// Writes records quantized to bytes (values clamped to [−1, 1]).
pub fn save_idx(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut dims: Vec<usize> = ds.records().shape().to_vec();
    if dims.len() == 4 && dims[1] == 1 {
        dims.remove(1);
    }
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + ds.records().numel());
    out.extend_from_slice(&[0, 0, UBYTE, dims.len() as u8]);
    for d in &dims {
        out.extend_from_slice(&(*d as u32).to_be_bytes());
    }
    out.extend(ds.records().data().iter().map(|&v| unit_to_byte(v)));
    Ok(write_atomic(path, &out)?)
}

pub fn save_idx_labels(labels: &[u32], path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut out = vec![0, 0, UBYTE, 1];
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        let b = u8::try_from(l).map_err(|_| DataError::Invalid(format!("label {l} does not fit in a byte")))?;
        out.push(b);
    }
    Ok(write_atomic(path, &out)?)
}
