use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::nn::{dot, norm2};

const MAX_CENTER_ATTEMPTS: usize = 1_000_000;
const MAX_CENTER_COSINE: f64 = 0.5;

/// Generative description of the micro-cluster benchmark.
///
/// Every class owns `modes_per_class` tight Gaussian clusters whose centers
/// sit on the sphere of `radius`, pairwise cosine below 0.5.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub d: usize,
    pub k: usize,
    pub modes_per_class: usize,
    pub cluster_std: f64,
    pub samples_per_mode: usize,
    pub radius: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            d: 64,
            k: 4,
            modes_per_class: 2,
            cluster_std: 0.05,
            samples_per_mode: 250,
            radius: 1.0,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.k == 0 || self.modes_per_class == 0 || self.samples_per_mode == 0 {
            return Err(Error::Config("synthetic spec counts must all be >= 1".into()));
        }
        if !(self.cluster_std > 0.0 && self.cluster_std.is_finite()) {
            return Err(Error::Config(format!("cluster_std must be > 0, got {}", self.cluster_std)));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::Config(format!("radius must be > 0, got {}", self.radius)));
        }
        Ok(())
    }

    pub fn num_modes(&self) -> usize {
        self.k * self.modes_per_class
    }
}

/// Output of [`gen_microclusters`]. `centers[j]` belongs to class `j / modes_per_class`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub train: Dataset,
    pub test: Dataset,
    pub centers: Vec<Vec<f64>>,
}

/// Uniform draw from the unit sphere in `d` dimensions (normalized Gaussian).
pub fn sample_unit_sphere<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm2(&v);
        if n > 0.0 && n.is_finite() {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

pub fn gen_microclusters(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(spec.num_modes());
    let mut attempts = 0;
    while centers.len() < spec.num_modes() {
        if attempts >= MAX_CENTER_ATTEMPTS {
            return Err(Error::Infeasible(format!(
                "placed {} of {} mode centers in d={} within the rejection limit of {MAX_CENTER_ATTEMPTS} attempts",
                centers.len(),
                spec.num_modes(),
                spec.d
            )));
        }
        attempts += 1;
        let candidate = sample_unit_sphere(spec.d, &mut rng);
        if centers.iter().all(|c| dot(c, &candidate) < MAX_CENTER_COSINE) {
            centers.push(candidate);
        }
    }
    for c in &mut centers {
        c.iter_mut().for_each(|x| *x *= spec.radius);
    }

    let noise = Normal::new(0.0, spec.cluster_std).map_err(|e| Error::Config(e.to_string()))?;
    let n_test = spec.samples_per_mode / 5;
    let n_train = spec.samples_per_mode - n_test;
    let (mut train_x, mut train_y, mut test_x, mut test_y) = (vec![], vec![], vec![], vec![]);
    for (mode, center) in centers.iter().enumerate() {
        let class = mode / spec.modes_per_class;
        for i in 0..spec.samples_per_mode {
            let x: Vec<f64> = center.iter().map(|c| c + noise.sample(&mut rng)).collect();
            if i < n_train {
                train_x.push(x);
                train_y.push(class);
            } else {
                test_x.push(x);
                test_y.push(class);
            }
        }
    }

    Ok(SyntheticData {
        train: Dataset::new("synthetic-train", spec.k, train_x, train_y)?,
        test: Dataset::new("synthetic-test", spec.k, test_x, test_y)?,
        centers,
    })
}

/// `n` points uniform on the sphere of `radius`, labelled with the OOD sentinel `num_classes`.
pub fn gen_ood(n: usize, d: usize, radius: f64, num_classes: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::Config("gen_ood needs n >= 1 and d >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = (0..n)
        .map(|_| {
            let mut v = sample_unit_sphere(d, &mut rng);
            v.iter_mut().for_each(|x| *x *= radius);
            v
        })
        .collect();
    Dataset::new("ood-sphere", num_classes, features, vec![num_classes; n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::norm2;

    #[test]
    fn reference_counts_are_balanced() {
        let data = gen_microclusters(&SyntheticSpec::default()).unwrap();
        assert_eq!(data.train.len(), 1600);
        assert_eq!(data.test.len(), 400);
        for c in 0..4 {
            assert_eq!(data.train.labels.iter().filter(|&&l| l == c).count(), 400);
            assert_eq!(data.test.labels.iter().filter(|&&l| l == c).count(), 100);
        }
        assert_eq!(data.train.dim(), 64);
    }

    #[test]
    fn centers_are_separated() {
        let data = gen_microclusters(&SyntheticSpec {
            d: 8,
            k: 3,
            modes_per_class: 2,
            ..Default::default()
        })
        .unwrap();
        for (i, a) in data.centers.iter().enumerate() {
            assert!((norm2(a) - 1.0).abs() < 1e-12);
            for b in &data.centers[i + 1..] {
                assert!(dot(a, b) / (norm2(a) * norm2(b)) < 0.5);
            }
        }
    }

    #[test]
    fn tiny_spread_collapses_onto_centers() {
        let spec = SyntheticSpec {
            modes_per_class: 1,
            cluster_std: 1e-300,
            samples_per_mode: 10,
            ..Default::default()
        };
        let data = gen_microclusters(&spec).unwrap();
        for (x, y) in data.train.features.iter().zip(&data.train.labels) {
            assert_eq!(x, &data.centers[*y]);
        }
    }

    #[test]
    fn infeasible_spec_names_the_limit() {
        // 2-D circle cannot hold 20 directions with pairwise angle > 60°
        let spec = SyntheticSpec {
            d: 2,
            k: 10,
            modes_per_class: 2,
            ..Default::default()
        };
        let err = gen_microclusters(&spec).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
        assert!(err.to_string().contains("1000000"));
    }

    #[test]
    fn nearest_center_classifies_everything_in_separable_regime() {
        let spec = SyntheticSpec {
            cluster_std: 0.02,
            ..Default::default()
        };
        let data = gen_microclusters(&spec).unwrap();
        let min_dist = data
            .centers
            .iter()
            .enumerate()
            .flat_map(|(i, a)| data.centers[i + 1..].iter().map(move |b| dist(a, b)))
            .fold(f64::INFINITY, f64::min);
        assert!(spec.cluster_std * (spec.d as f64).sqrt() < 0.3 * min_dist);
        for ds in [&data.train, &data.test] {
            for (x, y) in ds.features.iter().zip(&ds.labels) {
                let nearest = (0..data.centers.len())
                    .min_by(|&i, &j| dist(x, &data.centers[i]).total_cmp(&dist(x, &data.centers[j])))
                    .unwrap();
                assert_eq!(nearest / spec.modes_per_class, *y);
            }
        }
    }

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn generators_are_seed_deterministic() {
        let spec = SyntheticSpec {
            samples_per_mode: 20,
            ..Default::default()
        };
        assert_eq!(gen_microclusters(&spec).unwrap(), gen_microclusters(&spec).unwrap());
        assert_eq!(gen_ood(50, 16, 2.0, 4, 9).unwrap(), gen_ood(50, 16, 2.0, 4, 9).unwrap());
        assert_ne!(gen_ood(50, 16, 2.0, 4, 9).unwrap(), gen_ood(50, 16, 2.0, 4, 10).unwrap());
    }

    #[test]
    fn ood_points_lie_on_the_sphere() {
        let ood = gen_ood(200, 32, 3.0, 4, 1).unwrap();
        assert!(ood.features.iter().all(|x| (norm2(x) - 3.0).abs() < 1e-9));
        assert!(ood.labels.iter().all(|&l| l == 4));
    }
}
