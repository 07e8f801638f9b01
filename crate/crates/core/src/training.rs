//! Mini-batch Adam training with cross-entropy or LogitNorm loss.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{argmax, cross_entropy_t, cross_entropy_t_grad, norm2, AdamState, Gradients, Mlp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Logitnorm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub logitnorm_tau: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss_kind: LossKind::CrossEntropy,
            logitnorm_tau: 0.04,
            epochs: 100,
            batch_size: 32,
            lr: 0.01,
            seed: 42,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if !(self.logitnorm_tau > 0.0) {
            return Err(Error::Config(format!("logitnorm_tau must be > 0, got {}", self.logitnorm_tau)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_accuracy)
    }

    /// CSV with header `epoch,train_loss,train_accuracy`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epoch,train_loss,train_accuracy")?;
        for e in &self.epochs {
            writeln!(out, "{},{},{}", e.epoch, e.train_loss, e.train_accuracy)?;
        }
        Ok(())
    }
}

/// Cross-entropy of `softmax(logits / (tau·‖logits‖₂))` at `target`.
pub fn logitnorm_loss(logits: &[f64], target: usize, tau: f64) -> Result<f64> {
    let scaled = logitnorm_scaled(logits, tau)?;
    cross_entropy_t(&scaled, target, 1.0)
}

fn logitnorm_scaled(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("logitnorm tau must be > 0, got {tau}")));
    }
    let n = norm2(logits);
    if n == 0.0 {
        return Err(Error::Degenerate("logitnorm of an all-zero logit vector".into()));
    }
    Ok(logits.iter().map(|z| z / (tau * n)).collect())
}

/// Gradient of [`logitnorm_loss`] with respect to the raw logits.
pub fn logitnorm_grad(logits: &[f64], target: usize, tau: f64) -> Result<Vec<f64>> {
    let scaled = logitnorm_scaled(logits, tau)?;
    let g = cross_entropy_t_grad(&scaled, target, 1.0)?;
    let n = norm2(logits);
    let zg: f64 = logits.iter().zip(&g).map(|(z, gi)| z * gi).sum();
    Ok(logits
        .iter()
        .zip(&g)
        .map(|(z, gi)| (gi - z * zg / (n * n)) / (tau * n))
        .collect())
}

fn check_data(model: &Mlp, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty(format!("dataset {:?} has no samples", data.name)));
    }
    if data.dim() != model.input_dim() {
        return Err(Error::Shape(format!(
            "dataset {:?} has {} features, model expects {}",
            data.name,
            data.dim(),
            model.input_dim()
        )));
    }
    Ok(())
}

/// Predicted class per sample under the deterministic forward pass.
pub fn predict(model: &Mlp, data: &Dataset) -> Result<Vec<usize>> {
    data.features
        .par_iter()
        .map(|x| model.logits(x).map(|l| argmax(&l)))
        .collect()
}

/// Fraction of samples whose argmax logit equals the label.
pub fn evaluate(model: &Mlp, data: &Dataset) -> Result<f64> {
    check_data(model, data)?;
    let preds = predict(model, data)?;
    let correct = preds.iter().zip(&data.labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / data.len() as f64)
}

struct SampleStep {
    grads: Gradients,
    loss: f64,
}

fn sample_step(model: &Mlp, x: &[f64], y: usize, cfg: &TrainConfig, seed: u64) -> Result<SampleStep> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trace = model.forward_stochastic(x, &mut rng)?;
    let logits = trace.logits();
    let (loss, dlogits) = match cfg.loss_kind {
        LossKind::CrossEntropy => (cross_entropy_t(logits, y, 1.0)?, cross_entropy_t_grad(logits, y, 1.0)?),
        LossKind::Logitnorm => (
            logitnorm_loss(logits, y, cfg.logitnorm_tau)?,
            logitnorm_grad(logits, y, cfg.logitnorm_tau)?,
        ),
    };
    let (grads, _) = model.backward_from_logits(&trace, &dlogits)?;
    Ok(SampleStep { grads, loss })
}

/// Train `model` in place. Per-sample gradients are computed in parallel and
/// reduced in sample order, so results are independent of the thread count.
pub fn train(model: &mut Mlp, data: &Dataset, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    check_data(model, data)?;
    if let Some(&bad) = data.labels.iter().find(|&&l| l >= model.num_classes()) {
        return Err(Error::Index {
            index: bad,
            len: model.num_classes(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&model.param_lens());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut losses = vec![0.0; data.len()];
        for batch in order.chunks(cfg.batch_size) {
            let seeds: Vec<u64> = batch.iter().map(|_| rng.random()).collect();
            let model_ref: &Mlp = model;
            let steps = batch
                .par_iter()
                .zip(&seeds)
                .map(|(&i, &s)| sample_step(model_ref, &data.features[i], data.labels[i], cfg, s))
                .collect::<Result<Vec<_>>>()?;

            let mut total = Gradients::zeros_like(model);
            for (step, &i) in steps.iter().zip(batch) {
                total.add_assign(&step.grads);
                losses[i] = step.loss;
            }
            total.scale(1.0 / batch.len() as f64);
            if !total.slices().iter().all(|s| s.iter().all(|v| v.is_finite())) {
                return Err(Error::Optimization {
                    iteration: epoch,
                    reason: "non-finite training gradient".into(),
                });
            }
            adam.step(&mut model.param_slices_mut(), &total.slices(), cfg.lr)?;
        }
        history.epochs.push(EpochStats {
            epoch: epoch + 1,
            // summed in sample order so the value does not depend on the shuffle
            train_loss: losses.iter().sum::<f64>() / data.len() as f64,
            train_accuracy: evaluate(model, data)?,
        });
    }
    Ok(history)
}
