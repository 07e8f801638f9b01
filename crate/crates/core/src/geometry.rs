//! High-dimensional geometry behind the score, with Monte-Carlo checks.
//!
//! Closed forms: the normal CDF, the pairwise sorting-error probability under
//! Gaussian score noise, the expected minimum pairwise cosine of random points
//! on a sphere, and the Chebyshev bound on norm concentration. Every Monte-Carlo
//! routine splits its trials into fixed-size chunks, each drawing from its own
//! ChaCha stream of the given seed, so results do not depend on the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::sample_unit_sphere;
use crate::error::{Error, Result};
use crate::nn::{dot, norm2};

const CHUNK: usize = 8192;

/// Monte-Carlo estimate next to the value theory predicts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub trials: usize,
    pub empirical_value: f64,
    pub theoretical_value: f64,
    pub abs_error: f64,
    /// `abs_error / |theoretical_value|`, or `abs_error` when the theory says 0.
    pub rel_error: f64,
}

impl McReport {
    pub fn new(trials: usize, empirical_value: f64, theoretical_value: f64) -> Self {
        let abs_error = (empirical_value - theoretical_value).abs();
        let rel_error = if theoretical_value == 0.0 {
            abs_error
        } else {
            abs_error / theoretical_value.abs()
        };
        McReport {
            trials,
            empirical_value,
            theoretical_value,
            abs_error,
            rel_error,
        }
    }
}

fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

/// Run `trials` draws in chunks; `f(rng, n)` handles one chunk of `n` draws.
fn chunked<T, F>(trials: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, usize) -> T + Sync,
{
    let chunks = trials.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| f(&mut chunk_rng(seed, c), CHUNK.min(trials - c * CHUNK)))
        .collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Standard normal CDF, `Φ(z) = erfc(−z/√2)/2`.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Probability that Gaussian noise of std `sigma` on each of two scores
/// reverses a true gap of `delta_s`: `1 − Φ(Δs / (√2σ))`.
pub fn sorting_error_prob(delta_s: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Domain(format!("sigma must be > 0, got {sigma}")));
    }
    if !(delta_s >= 0.0) {
        return Err(Error::Domain(format!("score gap must be >= 0, got {delta_s}")));
    }
    // upper tail straight from erfc; 1 − Φ cancels to 0 far out
    Ok(0.5 * libm::erfc(delta_s / (2.0 * sigma)))
}

/// Fraction of trials where `s₁ + ε₁ < s₂ + ε₂` with `s₁ − s₂ = delta_s`.
pub fn mc_sorting_error(delta_s: f64, sigma: f64, trials: usize, seed: u64) -> Result<McReport> {
    let theory = sorting_error_prob(delta_s, sigma)?;
    if trials == 0 {
        return Err(Error::Config("trials must be >= 1".into()));
    }
    let flips: usize = chunked(trials, seed, |rng, n| {
        (0..n)
            .filter(|_| delta_s + sigma * normal(rng) < sigma * normal(rng))
            .count()
    })
    .iter()
    .sum();
    Ok(McReport::new(trials, flips as f64 / trials as f64, theory))
}

/// `n` independent uniform points on the unit sphere in `d` dimensions.
pub fn sample_sphere<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    if d < 2 {
        return Err(Error::Domain(format!("sphere sampling needs d >= 2, got {d}")));
    }
    Ok((0..n).map(|_| sample_unit_sphere(d, rng)).collect())
}

/// Smallest cosine over all unordered pairs.
pub fn min_pairwise_cos(points: &[Vec<f64>]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Empty(format!("need at least two points, got {}", points.len())));
    }
    let norms: Vec<f64> = points.iter().map(|p| norm2(p)).collect();
    if norms.contains(&0.0) {
        return Err(Error::Degenerate("zero vector among the points".into()));
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::Shape("points of differing dimension".into()));
    }
    let mut min = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            min = min.min(dot(&points[i], &points[j]) / (norms[i] * norms[j]));
        }
    }
    Ok(min.clamp(-1.0, 1.0))
}

/// `−√(2 ln n / d)`, the large-`n`, large-`d` approximation of the expected minimum pairwise cosine.
pub fn expected_min_cos(n: usize, d: usize) -> Result<f64> {
    if n < 2 || d == 0 {
        return Err(Error::Domain(format!("need n >= 2 and d >= 1, got n={n}, d={d}")));
    }
    Ok(-(2.0 * (n as f64).ln() / d as f64).sqrt())
}

/// Mean of [`min_pairwise_cos`] over `reps` independent draws of `n` points.
pub fn mc_min_cos(n: usize, d: usize, reps: usize, seed: u64) -> Result<McReport> {
    let theory = expected_min_cos(n, d)?;
    if reps == 0 {
        return Err(Error::Config("reps must be >= 1".into()));
    }
    let mins: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| min_pairwise_cos(&sample_sphere(n, d, &mut chunk_rng(seed, r))?))
        .collect::<Result<_>>()?;
    Ok(McReport::new(reps, mins.iter().sum::<f64>() / reps as f64, theory))
}

/// Empirical `P(|‖x‖ − √d·σ| < ε√d·σ)` for `x ~ N(0, σ²I_d)` against the
/// Chebyshev lower bound `1 − 2/(ε²d)` (Gaussian fourth moment), floored at 0.
pub fn norm_concentration(d: usize, sigma: f64, samples: usize, eps: f64, seed: u64) -> Result<McReport> {
    if d == 0 || samples == 0 {
        return Err(Error::Config("d and samples must be >= 1".into()));
    }
    if !(sigma > 0.0 && eps > 0.0) {
        return Err(Error::Domain(format!("sigma and eps must be > 0, got {sigma}, {eps}")));
    }
    let center = (d as f64).sqrt() * sigma;
    let inside: usize = chunked(samples, seed, |rng, n| {
        (0..n)
            .filter(|_| {
                let sq: f64 = (0..d).map(|_| (sigma * normal(rng)).powi(2)).sum();
                (sq.sqrt() - center).abs() < eps * center
            })
            .count()
    })
    .iter()
    .sum();
    let bound = (1.0 - 2.0 / (eps * eps * d as f64)).max(0.0);
    Ok(McReport::new(samples, inside as f64 / samples as f64, bound))
}

/// `trials` standard normal draws shifted and scaled to sample mean 0 and
/// sample variance 1, so that only the nonlinearity shows in variance ratios.
fn standardized_normals(trials: usize, seed: u64) -> Vec<f64> {
    let mut z: Vec<f64> = chunked(trials, seed, |rng, n| (0..n).map(|_| normal(rng)).collect::<Vec<f64>>())
        .into_iter()
        .flatten()
        .collect();
    let (mean, var) = mean_var(&z);
    let sd = var.sqrt();
    z.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    z
}

/// Mean and population variance.
fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Sorting errors under angular noise versus direct score noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosNoiseReport {
    /// Empirical `Var(cos(ω + δω))` against `sin²ω·σ_ω²`.
    pub variance: McReport,
    /// True score gap between the two compared items.
    pub score_gap: f64,
    pub p_cos: f64,
    pub p_direct: f64,
    /// Binomial standard deviation of `p_direct`.
    pub binomial_sd: f64,
    /// `p_cos ≤ p_direct + 2·binomial_sd`.
    pub bound_holds: bool,
}

/// Propagate angular noise `δω ~ N(0, σ_ω²)` through `cos`.
///
/// The variance part uses a standardized normal sample. The sorting part ranks
/// two items with scores `cos ω` and `cos ω − σ_ω/2`: under angular noise each
/// item's angle is perturbed, under direct noise each score gets `−δω` added.
/// Both scenarios share the same draws, so their difference carries little
/// Monte-Carlo noise.
pub fn cos_noise_bound_check(omega: f64, sigma_omega: f64, trials: usize, seed: u64) -> Result<CosNoiseReport> {
    if !(omega > 0.0 && omega < std::f64::consts::PI) {
        return Err(Error::Domain(format!("omega must lie in (0, π), got {omega}")));
    }
    if !(sigma_omega > 0.0 && sigma_omega.is_finite()) {
        return Err(Error::Domain(format!("sigma_omega must be > 0, got {sigma_omega}")));
    }
    if trials < 2 {
        return Err(Error::Config("trials must be >= 2".into()));
    }

    let z = standardized_normals(trials, seed);
    let noisy: Vec<f64> = z.iter().map(|v| (omega + sigma_omega * v).cos()).collect();
    let (_, var) = mean_var(&noisy);
    let variance = McReport::new(trials, var, omega.sin().powi(2) * sigma_omega.powi(2));

    let gap = sigma_omega / 2.0;
    let s1 = omega.cos();
    let s2 = s1 - gap;
    if s2 < -1.0 {
        return Err(Error::Domain(format!("score gap {gap} leaves [-1, 1] at omega {omega}")));
    }
    let omega2 = s2.acos();
    let (cos_flips, direct_flips) = chunked(trials, seed ^ 0x5eed, |rng, n| {
        let (mut c, mut d) = (0usize, 0usize);
        for _ in 0..n {
            let (d1, d2) = (sigma_omega * normal(rng), sigma_omega * normal(rng));
            c += usize::from((omega + d1).cos() < (omega2 + d2).cos());
            d += usize::from(s1 - d1 < s2 - d2);
        }
        (c, d)
    })
    .into_iter()
    .fold((0, 0), |(a, b), (c, d)| (a + c, b + d));
    let n = trials as f64;
    let (p_cos, p_direct) = (cos_flips as f64 / n, direct_flips as f64 / n);
    let binomial_sd = (p_direct * (1.0 - p_direct) / n).sqrt();
    Ok(CosNoiseReport {
        variance,
        score_gap: gap,
        p_cos,
        p_direct,
        binomial_sd,
        bound_holds: p_cos <= p_direct + 2.0 * binomial_sd,
    })
}

/// One pass/fail line of the theory suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryCheck {
    pub name: String,
    pub requirement: String,
    pub passed: bool,
    pub report: McReport,
}

fn check(name: &str, requirement: &str, passed: bool, report: McReport) -> TheoryCheck {
    TheoryCheck {
        name: name.into(),
        requirement: requirement.into(),
        passed,
        report,
    }
}

/// The full theory suite at its reference sizes.
pub fn verify_theory(seed: u64) -> Result<Vec<TheoryCheck>> {
    let mut checks = Vec::new();

    let conc = norm_concentration(10_000, 1.0, 10_000, 0.02, seed)?;
    checks.push(check(
        "norm_concentration",
        "d=10000, sigma=1, eps=0.02: empirical probability >= 0.99",
        conc.empirical_value >= 0.99,
        conc,
    ));

    let low = mc_min_cos(1000, 128, 50, seed.wrapping_add(1))?;
    let high = mc_min_cos(1000, 512, 50, seed.wrapping_add(2))?;
    for (d, r) in [(128, &low), (512, &high)] {
        checks.push(check(
            &format!("min_pairwise_cos_d{d}"),
            "n=1000, 50 reps: mean negative and within 25% of -sqrt(2 ln n / d)",
            r.empirical_value < 0.0 && r.rel_error <= 0.25,
            r.clone(),
        ));
    }
    let shrink = McReport::new(50, high.empirical_value / low.empirical_value, 0.5);
    checks.push(check(
        "min_pairwise_cos_trend",
        "magnitude at d=512 below magnitude at d=128 (theory ratio 0.5)",
        high.empirical_value.abs() < low.empirical_value.abs(),
        shrink,
    ));

    let sort = mc_sorting_error(1.0, 1.0, 100_000, seed.wrapping_add(3))?;
    checks.push(check(
        "sorting_error",
        "delta_s=1, sigma=1, 1e5 trials: within 0.005 of 1 - Phi(1/sqrt 2)",
        sort.abs_error <= 0.005,
        sort,
    ));

    let right = cos_noise_bound_check(std::f64::consts::FRAC_PI_2, 0.05, 100_000, seed.wrapping_add(4))?;
    let ratio = right.variance.empirical_value / right.variance.theoretical_value;
    checks.push(check(
        "cos_noise_variance",
        "omega=pi/2, sigma_omega=0.05, 1e5 trials: variance ratio within 5%",
        (ratio - 1.0).abs() <= 0.05,
        right.variance,
    ));
    for deg in [15u32, 30, 45, 60, 75, 90] {
        let omega = f64::from(deg).to_radians();
        let r = cos_noise_bound_check(omega, 0.05, 100_000, seed.wrapping_add(10 + u64::from(deg)))?;
        checks.push(check(
            &format!("cos_noise_bound_{deg}deg"),
            "sigma_omega=0.05, 1e5 trials: P_cos <= P_direct + 2 binomial sd",
            r.bound_holds,
            McReport::new(100_000, r.p_cos, r.p_direct),
        ));
    }
    Ok(checks)
}
