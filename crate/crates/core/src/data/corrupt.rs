use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionKind {
    Uniform,
    Gaussian,
    Brightness,
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(CorruptionKind::Uniform),
            "gaussian" => Ok(CorruptionKind::Gaussian),
            "brightness" => Ok(CorruptionKind::Brightness),
            other => Err(Error::Config(format!("unknown corruption kind {other:?}"))),
        }
    }
}

/// A noise corruption. `level` is in units of the dataset's feature std.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub level: f64,
    pub seed: u64,
}

/// Standard deviation of all feature values pooled together.
pub fn feature_std(data: &Dataset) -> f64 {
    let n = data.features.iter().map(Vec::len).sum::<usize>();
    if n == 0 {
        return 0.0;
    }
    let mean = data.features.iter().flatten().sum::<f64>() / n as f64;
    let var = data.features.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    var.sqrt()
}

/// Apply additive uniform, Gaussian or constant-shift noise scaled by the
/// dataset's feature std. Labels are untouched.
pub fn corrupt(data: &Dataset, spec: &CorruptionSpec) -> Result<Dataset> {
    if !(spec.level >= 0.0 && spec.level.is_finite()) {
        return Err(Error::Config(format!("corruption level must be finite and >= 0, got {}", spec.level)));
    }
    let mut out = data.clone();
    out.name = format!("{}+{:?}{}", data.name, spec.kind, spec.level).to_lowercase();
    let scale = spec.level * feature_std(data);
    if scale == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.kind {
        CorruptionKind::Uniform => {
            let dist = Uniform::new_inclusive(-scale, scale).map_err(|e| Error::Config(e.to_string()))?;
            out.features.iter_mut().flatten().for_each(|v| *v += dist.sample(&mut rng));
        }
        CorruptionKind::Gaussian => {
            let dist = Normal::new(0.0, scale).map_err(|e| Error::Config(e.to_string()))?;
            out.features.iter_mut().flatten().for_each(|v| *v += dist.sample(&mut rng));
        }
        CorruptionKind::Brightness => {
            out.features.iter_mut().flatten().for_each(|v| *v += scale);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_microclusters, SyntheticSpec};

    fn base() -> Dataset {
        gen_microclusters(&SyntheticSpec {
            samples_per_mode: 100,
            ..Default::default()
        })
        .unwrap()
        .test
    }

    #[test]
    fn zero_level_is_identity() {
        let data = base();
        for kind in [CorruptionKind::Uniform, CorruptionKind::Gaussian, CorruptionKind::Brightness] {
            let out = corrupt(&data, &CorruptionSpec { kind, level: 0.0, seed: 3 }).unwrap();
            assert_eq!(out.features, data.features);
            assert_eq!(out.labels, data.labels);
        }
    }

    #[test]
    fn brightness_shifts_exactly() {
        let data = base();
        let s = feature_std(&data);
        let out = corrupt(
            &data,
            &CorruptionSpec {
                kind: CorruptionKind::Brightness,
                level: 0.7,
                seed: 0,
            },
        )
        .unwrap();
        for (a, b) in out.features.iter().flatten().zip(data.features.iter().flatten()) {
            assert_eq!(*a, b + 0.7 * s);
        }
    }

    #[test]
    fn gaussian_noise_std_scales_with_level() {
        let data = base();
        let added_std = |level: f64| {
            let out = corrupt(
                &data,
                &CorruptionSpec {
                    kind: CorruptionKind::Gaussian,
                    level,
                    seed: 8,
                },
            )
            .unwrap();
            let diffs: Vec<f64> = out
                .features
                .iter()
                .flatten()
                .zip(data.features.iter().flatten())
                .map(|(a, b)| a - b)
                .collect();
            assert!(diffs.len() >= 10_000);
            let m = diffs.iter().sum::<f64>() / diffs.len() as f64;
            (diffs.iter().map(|d| (d - m).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt()
        };
        let ratio = added_std(0.4) / added_std(0.2);
        assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn uniform_noise_is_bounded_and_keeps_labels() {
        let data = base();
        let s = feature_std(&data);
        let out = corrupt(
            &data,
            &CorruptionSpec {
                kind: CorruptionKind::Uniform,
                level: 0.5,
                seed: 1,
            },
        )
        .unwrap();
        assert_eq!(out.len(), data.len());
        assert_eq!(out.labels, data.labels);
        for (a, b) in out.features.iter().flatten().zip(data.features.iter().flatten()) {
            assert!((a - b).abs() <= 0.5 * s);
        }
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("gaussian".parse::<CorruptionKind>().unwrap(), CorruptionKind::Gaussian);
        assert!("blur".parse::<CorruptionKind>().is_err());
        assert!(corrupt(
            &base(),
            &CorruptionSpec {
                kind: CorruptionKind::Uniform,
                level: -1.0,
                seed: 0
            }
        )
        .is_err());
    }
}
