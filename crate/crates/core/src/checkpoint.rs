//! Binary parameter snapshots.
//!
//! Layout, all little-endian: `b"ACAE"`, `u32` version, `u64` U, I, K,
//! one `u8` activation tag each for encoder and decoder, then W1, W2, b1,
//! b2, P as row-major `f64`.

use std::fs;
use std::path::Path;

use crate::error::{AcaeError, Result};
use crate::model::{ActivationKind, ModelParams};
use crate::numerics::Matrix;

pub const MAGIC: &[u8; 4] = b"ACAE";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 3 * 8 + 2;

pub fn to_bytes(params: &ModelParams) -> Vec<u8> {
    let (u, i, k) = (params.users(), params.items(), params.hidden());
    let floats: usize = params.tensors().iter().map(|m| m.len()).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * floats);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in [u, i, k] {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.push(params.encoder.tag());
    out.push(params.decoder.tag());
    for m in params.tensors() {
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses a snapshot; `origin` only labels errors.
pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<ModelParams> {
    let fail = |reason: String| AcaeError::Checkpoint {
        path: origin.to_path_buf(),
        reason,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fail(format!(
            "truncated header: expected at least {HEADER_LEN} bytes, found {}",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail("bad magic, not a checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(fail(format!(
            "unsupported version {version}, this build reads version {VERSION}"
        )));
    }
    let dim = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
    let (u, i, k) = (dim(8), dim(16), dim(24));
    let tag = |at: usize, what: &str| {
        ActivationKind::from_tag(bytes[at]).ok_or_else(|| fail(format!("unknown {what} activation tag {}", bytes[at])))
    };
    let encoder = tag(32, "encoder")?;
    let decoder = tag(33, "decoder")?;
    if u == 0 || i == 0 || k == 0 {
        return Err(fail(format!("degenerate shape U={u} I={i} K={k}")));
    }

    let floats = [k * i, i * k, k, i, k * u]
        .iter()
        .try_fold(0u64, |acc, &n| acc.checked_add(n))
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_LEN as u64))
        .ok_or_else(|| fail(format!("shape U={u} I={i} K={k} overflows")))?;
    if bytes.len() as u64 != floats {
        return Err(fail(format!(
            "expected {floats} bytes for U={u} I={i} K={k}, found {}",
            bytes.len()
        )));
    }

    let (u, i, k) = (u as usize, i as usize, k as usize);
    let mut at = HEADER_LEN;
    let mut read = |rows: usize, cols: usize| {
        let data: Vec<f64> = bytes[at..at + 8 * rows * cols]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        at += 8 * rows * cols;
        Matrix::from_vec(rows, cols, data).expect("length checked above")
    };
    let params = ModelParams {
        w1: read(k, i),
        w2: read(i, k),
        b1: read(k, 1),
        b2: read(i, 1),
        p: read(k, u),
        encoder,
        decoder,
    };
    params.validate()?;
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    params.validate()?;
    fs::write(path, to_bytes(params)).map_err(|e| AcaeError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| AcaeError::io(path, e))?;
    from_bytes(&bytes, path)
}
