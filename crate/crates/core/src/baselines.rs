//! Reference confidence scores: MC-dropout predictive entropy and max softmax probability.
//!
//! Both are oriented so that higher means more confident. Predictions always
//! come from the deterministic forward pass, so every method ranks the same
//! set of correct and incorrect samples.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{argmax, softmax_t, Mlp};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DropoutConfig {
    pub passes: usize,
    pub seed: u64,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        DropoutConfig { passes: 50, seed: 42 }
    }
}

/// Score of one sample under a baseline method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub predicted_label: usize,
    pub score: f64,
}

/// Natural-log Shannon entropy, `0·ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::Empty("entropy of an empty distribution".into()));
    }
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Domain(format!("not a probability vector: {p:?}")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("probabilities sum to {total}")));
    }
    Ok(-p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>())
}

/// Negated entropy of the mean softmax over `cfg.passes` dropout forwards,
/// together with that mean distribution.
pub fn mc_dropout_score(model: &Mlp, x: &[f64], cfg: &DropoutConfig) -> Result<(f64, Vec<f64>)> {
    if cfg.passes == 0 {
        return Err(Error::Config("passes must be >= 1".into()));
    }
    if model.config().dropout_rate == 0.0 {
        return Err(Error::Config(
            "MC dropout needs a model with dropout_rate > 0; every pass would be identical".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut mean = vec![0.0; model.num_classes()];
    for _ in 0..cfg.passes {
        let trace = model.forward_stochastic(x, &mut rng)?;
        for (m, p) in mean.iter_mut().zip(softmax_t(trace.logits(), 1.0)?) {
            *m += p;
        }
    }
    mean.iter_mut().for_each(|m| *m /= cfg.passes as f64);
    let score = -entropy(&mean)?;
    Ok((score, mean))
}

/// Largest softmax probability at `T = 1`.
pub fn msp_score(model: &Mlp, x: &[f64]) -> Result<f64> {
    let p = softmax_t(&model.logits(x)?, 1.0)?;
    Ok(p.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Per-sample seeds drawn in order from one stream, so results do not depend on scheduling.
fn sample_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random()).collect()
}

pub fn batch_mc_dropout_scores(model: &Mlp, xs: &[Vec<f64>], cfg: &DropoutConfig) -> Result<Vec<BaselineResult>> {
    let seeds = sample_seeds(cfg.seed, xs.len());
    xs.par_iter()
        .zip(seeds)
        .enumerate()
        .map(|(i, (x, seed))| {
            let run = || -> Result<BaselineResult> {
                let sample_cfg = DropoutConfig { seed, ..cfg.clone() };
                let (score, _) = mc_dropout_score(model, x, &sample_cfg)?;
                Ok(BaselineResult {
                    predicted_label: argmax(&model.logits(x)?),
                    score,
                })
            };
            run().map_err(|e| e.at_sample(i))
        })
        .collect()
}

pub fn batch_msp_scores(model: &Mlp, xs: &[Vec<f64>]) -> Result<Vec<BaselineResult>> {
    xs.par_iter()
        .enumerate()
        .map(|(i, x)| {
            let run = || -> Result<BaselineResult> {
                let logits = model.logits(x)?;
                let p = softmax_t(&logits, 1.0)?;
                let label = argmax(&logits);
                Ok(BaselineResult {
                    predicted_label: label,
                    score: p[label],
                })
            };
            run().map_err(|e| e.at_sample(i))
        })
        .collect()
}

/// CSV with header `sample_id,true_label,predicted_label,score,method`.
pub fn write_baseline_csv<W: Write>(
    mut out: W,
    method: &str,
    results: &[BaselineResult],
    true_labels: &[usize],
) -> Result<()> {
    if results.len() != true_labels.len() {
        return Err(Error::Shape(format!(
            "{} results but {} labels",
            results.len(),
            true_labels.len()
        )));
    }
    writeln!(out, "sample_id,true_label,predicted_label,score,method")?;
    for (i, (r, y)) in results.iter().zip(true_labels).enumerate() {
        writeln!(out, "{i},{y},{},{},{method}", r.predicted_label, r.score)?;
    }
    Ok(())
}
