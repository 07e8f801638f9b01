use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

/// One label byte followed by 32×32 R, G and B planes.
pub const CIFAR_RECORD_LEN: usize = 3073;

/// Parse the CIFAR-10 binary batch format; pixels are scaled to `[0, 1]`.
pub fn parse_cifar10_bin(bytes: &[u8]) -> Result<Dataset> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD_LEN) {
        return Err(Error::Format(format!(
            "CIFAR-10 file length {} is not a multiple of {CIFAR_RECORD_LEN}",
            bytes.len()
        )));
    }
    let mut features = Vec::with_capacity(bytes.len() / CIFAR_RECORD_LEN);
    let mut labels = Vec::with_capacity(features.capacity());
    for (i, record) in bytes.chunks_exact(CIFAR_RECORD_LEN).enumerate() {
        let label = record[0];
        if label > 9 {
            return Err(Error::Format(format!("record {i} has label byte {label}")));
        }
        labels.push(label as usize);
        features.push(record[1..].iter().map(|&b| f64::from(b) / 255.0).collect());
    }
    Dataset::new("cifar10", 10, features, labels)
}

pub fn load_cifar10_bin(path: impl AsRef<Path>) -> Result<Dataset> {
    parse_cifar10_bin(&fs::read(path)?)
}
