//! Binary model checkpoints.
//!
//! Layout: the 8 magic bytes `TRSTMLP1`, a little-endian `u32` byte length,
//! that many bytes of UTF-8 JSON `{layer_dims, dropout_rate, seed}`, then for
//! each layer its weight matrix (row-major) followed by its bias vector, every
//! value a little-endian IEEE-754 `f64`.

use std::fs;
use std::path::Path;

use super::matrix::Matrix;
use super::mlp::{Mlp, MlpConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TRSTMLP1";

pub fn to_bytes(model: &Mlp) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(model.config())?;
    let mut out = Vec::with_capacity(12 + header.len() + 8 * model.param_lens().iter().sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for (w, b) in model.weights().iter().zip(model.biases()) {
        for v in w.as_slice().iter().chain(b) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Mlp> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::Format("missing TRSTMLP1 magic".into()));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body_start = 12 + header_len;
    if bytes.len() < body_start {
        return Err(Error::Format("truncated checkpoint header".into()));
    }
    let config: MlpConfig = serde_json::from_slice(&bytes[12..body_start])?;
    config.validate()?;

    let expected: usize = config
        .layer_dims
        .windows(2)
        .map(|p| p[0] * p[1] + p[1])
        .sum::<usize>()
        * 8;
    let body = &bytes[body_start..];
    if body.len() != expected {
        return Err(Error::Format(format!(
            "checkpoint body is {} bytes, layer_dims {:?} need {expected}",
            body.len(),
            config.layer_dims
        )));
    }

    let mut values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for p in config.layer_dims.windows(2) {
        let w: Vec<f64> = values.by_ref().take(p[0] * p[1]).collect();
        weights.push(Matrix::from_vec(p[1], p[0], w)?);
        biases.push(values.by_ref().take(p[1]).collect());
    }
    Mlp::from_parts(config, weights, biases)
}

pub fn save(model: &Mlp, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Mlp> {
    from_bytes(&fs::read(path)?)
}
