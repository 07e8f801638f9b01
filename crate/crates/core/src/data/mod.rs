//! Datasets: synthetic hypersphere micro-clusters, corruptions, OOD draws,
//! CIFAR-10 binary ingestion and the on-disk dataset format.

mod cifar;
mod corrupt;
mod synthetic;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cifar::{load_cifar10_bin, parse_cifar10_bin, CIFAR_RECORD_LEN};
pub use corrupt::{corrupt, feature_std, CorruptionKind, CorruptionSpec};
pub use synthetic::{gen_microclusters, gen_ood, sample_unit_sphere, SyntheticData, SyntheticSpec};

/// Labelled feature vectors.
///
/// Labels lie in `0..num_classes`; the sentinel `num_classes` marks samples
/// that belong to no training class (out-of-distribution draws).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub num_classes: usize,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    name: String,
    d: usize,
    k: usize,
    n: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, num_classes: usize, features: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        let ds = Dataset {
            name: name.into(),
            num_classes,
            features,
            labels,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.len() != self.labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                self.features.len(),
                self.labels.len()
            )));
        }
        if let Some(first) = self.features.first() {
            if self.features.iter().any(|f| f.len() != first.len()) {
                return Err(Error::Shape("ragged feature rows".into()));
            }
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l > self.num_classes) {
            return Err(Error::Index {
                index: bad,
                len: self.num_classes + 1,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// The label carried by out-of-distribution samples.
    pub fn ood_label(&self) -> usize {
        self.num_classes
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            num_classes: self.num_classes,
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let header = serde_json::to_vec(&Header {
            name: self.name.clone(),
            d: self.dim(),
            k: self.num_classes,
            n: self.len(),
        })?;
        let mut out = Vec::with_capacity(4 + header.len() + self.len() * (8 * self.dim() + 4));
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for row in &self.features {
            for v in row {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for &l in &self.labels {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Format("dataset file shorter than its length prefix".into()));
        }
        let header_len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        let start = 4 + header_len;
        if bytes.len() < start {
            return Err(Error::Format("truncated dataset header".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[4..start])?;
        let body = &bytes[start..];
        let expected = header.n * (8 * header.d + 4);
        if body.len() != expected {
            return Err(Error::Format(format!(
                "dataset body is {} bytes, header (n={}, d={}) needs {expected}",
                body.len(),
                header.n,
                header.d
            )));
        }
        let (feat_bytes, label_bytes) = body.split_at(header.n * header.d * 8);
        let values: Vec<f64> = feat_bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let features = if header.d == 0 {
            vec![Vec::new(); header.n]
        } else {
            values.chunks_exact(header.d).map(<[f64]>::to_vec).collect()
        };
        let labels = label_bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        Dataset::new(header.name, header.k, features, labels)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Dataset::from_bytes(&fs::read(path)?)
    }
}
