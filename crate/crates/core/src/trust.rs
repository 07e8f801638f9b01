//! Test-time nearest-mode optimization and the resulting cosine score.
//!
//! For a test input `x` the classifier's own prediction `y` is taken as the
//! target, and a perturbation `Δx` (starting at zero) is optimized with Adam
//! to minimize
//!
//! ```text
//! CE_T(f(x + Δx), y) + λ‖Δx‖₁
//! ```
//!
//! where `CE_T` is cross-entropy on temperature-scaled logits. The point
//! `x + Δx` approximates the mode of the micro-cluster `x` belongs to; the
//! score is the cosine similarity between the feature vectors of `x` and
//! `x + Δx`. Samples close to a mode barely move in feature space and score
//! near 1.
//!
//! Subgradient methods are not descent methods, so the returned perturbation
//! is the best iterate seen (lowest objective), which includes `Δx = 0`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{argmax, cross_entropy_t, cross_entropy_t_grad, dot, norm2, AdamState, Mlp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L1Mode {
    /// Add `λ·sign(Δx)` (with `sign(0) = 0`) to the gradient before the Adam step.
    Subgradient,
    /// Adam on the cross-entropy alone, then soft-threshold each coordinate by
    /// `λ` times its Adam step size `lr / (√v̂ + ε)`.
    Proximal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrustConfig {
    #[serde(rename = "T")]
    pub temperature: f64,
    pub lambda: f64,
    pub lr: f64,
    pub max_iters: usize,
    /// Plateau threshold on the difference of consecutive window means.
    pub tol: f64,
    pub window: usize,
    /// Activation index used as feature space; `None` means the last hidden layer.
    pub feature_layer: Option<usize>,
    pub l1_mode: L1Mode,
    /// Keep `x + Δx` inside `[0, 1]` (image inputs).
    pub clip_to_unit_box: bool,
}

impl Default for TrustConfig {
    fn default() -> Self {
        TrustConfig {
            temperature: 5.0,
            lambda: 0.001,
            lr: 0.001,
            max_iters: 10_000,
            tol: 1e-6,
            window: 100,
            feature_layer: None,
            l1_mode: L1Mode::Subgradient,
            clip_to_unit_box: false,
        }
    }
}

impl TrustConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("T must be > 0, got {}", self.temperature)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.max_iters == 0 || self.window == 0 {
            return Err(Error::Config("max_iters and window must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be > 0, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Outcome of scoring one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustResult {
    pub predicted_label: usize,
    pub delta_x: Vec<f64>,
    pub score: f64,
    /// Number of Adam updates applied.
    pub iterations_run: usize,
    pub initial_loss: f64,
    /// Objective at the returned perturbation.
    pub final_loss: f64,
}

/// `aᵀb / (‖a‖‖b‖)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("cosine of vectors of length {} and {}", a.len(), b.len())));
    }
    let (na, nb) = (norm2(a), norm2(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine similarity with a zero-norm vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

fn plateaued(losses: &[f64], window: usize, tol: f64) -> bool {
    let n = losses.len();
    if n < 2 * window {
        return false;
    }
    let last: f64 = losses[n - window..].iter().sum();
    let prev: f64 = losses[n - 2 * window..n - window].iter().sum();
    ((last - prev) / window as f64).abs() < tol
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Score one sample.
pub fn trust_score(model: &Mlp, x: &[f64], cfg: &TrustConfig) -> Result<TrustResult> {
    cfg.validate()?;
    let layer = cfg.feature_layer.unwrap_or_else(|| model.last_hidden_layer());
    let t = cfg.temperature;

    let base = model.forward(x)?;
    let target = argmax(base.logits());
    let base_feature = base.feature(layer)?.to_vec();
    if norm2(&base_feature) == 0.0 {
        return Err(Error::Degenerate(format!("feature layer {layer} of the input is all zero")));
    }

    let d = x.len();
    let mut delta = vec![0.0; d];
    let mut point = x.to_vec();
    let mut adam = AdamState::new(&[d]);
    let mut losses: Vec<f64> = Vec::with_capacity(cfg.max_iters.min(4096) + 1);
    let mut best_loss = f64::INFINITY;
    let mut best_delta = delta.clone();
    let mut iterations_run = cfg.max_iters;

    let objective = |trace_logits: &[f64], delta: &[f64]| -> Result<f64> {
        Ok(cross_entropy_t(trace_logits, target, t)? + cfg.lambda * l1(delta))
    };

    for it in 0..=cfg.max_iters {
        let trace = model.forward(&point)?;
        let loss = objective(trace.logits(), &delta)?;
        if !loss.is_finite() {
            return Err(Error::Optimization {
                iteration: it,
                reason: format!("objective became {loss}"),
            });
        }
        losses.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best_delta.copy_from_slice(&delta);
        }
        if it == cfg.max_iters {
            break;
        }
        if plateaued(&losses, cfg.window, cfg.tol) {
            iterations_run = it;
            break;
        }

        let dlogits = cross_entropy_t_grad(trace.logits(), target, t)?;
        let mut grad = model.input_gradient(&trace, &dlogits)?;
        if cfg.l1_mode == L1Mode::Subgradient {
            for (g, v) in grad.iter_mut().zip(&delta) {
                if *v != 0.0 {
                    *g += cfg.lambda * v.signum();
                }
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Optimization {
                iteration: it,
                reason: "non-finite input gradient".into(),
            });
        }
        adam.step(&mut [delta.as_mut_slice()], &[grad.as_slice()], cfg.lr)?;
        if cfg.l1_mode == L1Mode::Proximal {
            let steps = adam.effective_lr(0, cfg.lr);
            for (v, step) in delta.iter_mut().zip(steps) {
                *v = v.signum() * (v.abs() - cfg.lambda * step).max(0.0);
            }
        }
        for ((p, xi), v) in point.iter_mut().zip(x).zip(delta.iter_mut()) {
            if cfg.clip_to_unit_box {
                *v = (xi + *v).clamp(0.0, 1.0) - xi;
            }
            *p = xi + *v;
        }
    }

    let mode: Vec<f64> = x.iter().zip(&best_delta).map(|(a, b)| a + b).collect();
    let mode_trace = model.forward(&mode)?;
    let score = cosine_similarity(&base_feature, mode_trace.feature(layer)?)?;

    Ok(TrustResult {
        predicted_label: target,
        delta_x: best_delta,
        score,
        iterations_run,
        initial_loss: losses[0],
        final_loss: best_loss,
    })
}

/// Score every sample, in parallel on the global rayon pool. Results keep input order.
pub fn batch_trust_scores(model: &Mlp, xs: &[Vec<f64>], cfg: &TrustConfig) -> Result<Vec<TrustResult>> {
    cfg.validate()?;
    xs.par_iter()
        .enumerate()
        .map(|(i, x)| trust_score(model, x, cfg).map_err(|e| e.at_sample(i)))
        .collect()
}

/// [`batch_trust_scores`] on a dedicated pool of `workers` threads.
pub fn batch_trust_scores_with_workers(
    model: &Mlp,
    xs: &[Vec<f64>],
    cfg: &TrustConfig,
    workers: usize,
) -> Result<Vec<TrustResult>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| batch_trust_scores(model, xs, cfg))
}

/// CSV with header `sample_id,true_label,predicted_label,trust_score,iterations,final_loss`.
pub fn write_scores_csv<W: Write>(mut out: W, results: &[TrustResult], true_labels: &[usize]) -> Result<()> {
    if results.len() != true_labels.len() {
        return Err(Error::Shape(format!(
            "{} results but {} labels",
            results.len(),
            true_labels.len()
        )));
    }
    writeln!(out, "sample_id,true_label,predicted_label,trust_score,iterations,final_loss")?;
    for (i, (r, y)) in results.iter().zip(true_labels).enumerate() {
        writeln!(
            out,
            "{i},{y},{},{},{},{}",
            r.predicted_label, r.score, r.iterations_run, r.final_loss
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Matrix, MlpConfig};

    fn small_model() -> Mlp {
        Mlp::new(MlpConfig::new(vec![6, 16, 12, 3], 0.0, 7)).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let v = [0.3, -2.0, 5.0];
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[1.0, 2.0], &[2.0, 1.0]).unwrap() - 0.8).abs() < 1e-15);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::Degenerate(_))));
    }

    proptest::proptest! {
        #[test]
        fn cosine_ignores_positive_scale(
            a in proptest::collection::vec(-5.0f64..5.0, 4),
            b in proptest::collection::vec(-5.0f64..5.0, 4),
            s in 0.001f64..1000.0,
        ) {
            proptest::prop_assume!(norm2(&a) > 1e-3 && norm2(&b) > 1e-3);
            let c = cosine_similarity(&a, &b).unwrap();
            let scaled: Vec<f64> = a.iter().map(|v| v * s).collect();
            proptest::prop_assert!((cosine_similarity(&scaled, &b).unwrap() - c).abs() < 1e-12);
            proptest::prop_assert!((-1.0..=1.0).contains(&c));
        }
    }

    #[test]
    fn plateau_detection() {
        assert!(!plateaued(&[1.0; 3], 2, 1e-6));
        assert!(plateaued(&[1.0; 4], 2, 1e-6));
        assert!(!plateaued(&[4.0, 3.0, 2.0, 1.0], 2, 1e-6));
    }

    #[test]
    fn huge_lambda_keeps_delta_at_zero() {
        let model = small_model();
        let x = [0.5, -0.3, 1.2, 0.0, 0.7, -1.1];
        for mode in [L1Mode::Subgradient, L1Mode::Proximal] {
            let cfg = TrustConfig {
                lambda: 1e6,
                max_iters: 300,
                l1_mode: mode,
                ..Default::default()
            };
            let r = trust_score(&model, &x, &cfg).unwrap();
            assert!(r.delta_x.iter().all(|v| *v == 0.0), "{mode:?}");
            assert_eq!(r.score, 1.0);
            assert_eq!(r.final_loss, r.initial_loss);
        }
    }

    #[test]
    fn optimization_lowers_the_loss_and_respects_budget() {
        let model = small_model();
        let x = [0.1, 0.2, -0.4, 0.9, -0.2, 0.3];
        let cfg = TrustConfig {
            max_iters: 500,
            ..Default::default()
        };
        let r = trust_score(&model, &x, &cfg).unwrap();
        assert!(r.iterations_run <= 500);
        assert!(r.final_loss < r.initial_loss);
        assert!((-1.0..=1.0).contains(&r.score));
        assert_eq!(r.predicted_label, argmax(&model.logits(&x).unwrap()));
        assert!(r.delta_x.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn single_iteration_budget() {
        let model = small_model();
        let r = trust_score(&model, &[1.0; 6], &TrustConfig { max_iters: 1, ..Default::default() }).unwrap();
        assert_eq!(r.iterations_run, 1);
        assert!(r.final_loss <= r.initial_loss);
    }

    #[test]
    fn proximal_mode_zeroes_weak_coordinates() {
        // inputs 3..6 barely influence the logits
        let mut w1 = Matrix::identity(6);
        for i in 3..6 {
            w1.set(i, i, 1e-3);
        }
        let w2 = Matrix::from_vec(3, 6, (0..18).map(|i| ((i * 7) % 5) as f64 / 2.0 - 1.0).collect()).unwrap();
        let model = Mlp::from_parts(
            MlpConfig::new(vec![6, 6, 3], 0.0, 0),
            vec![w1, w2],
            vec![vec![0.1; 6], vec![0.0; 3]],
        )
        .unwrap();
        let x = [0.5, 0.4, 0.3, 0.5, 0.4, 0.3];
        let cfg = TrustConfig {
            lambda: 0.01,
            lr: 0.01,
            max_iters: 400,
            l1_mode: L1Mode::Proximal,
            ..Default::default()
        };
        let prox = trust_score(&model, &x, &cfg).unwrap();
        assert!(prox.delta_x[..3].iter().all(|v| *v != 0.0), "{:?}", prox.delta_x);
        assert!(prox.delta_x[3..].iter().all(|v| *v == 0.0), "{:?}", prox.delta_x);

        let sub = trust_score(&model, &x, &TrustConfig { l1_mode: L1Mode::Subgradient, ..cfg }).unwrap();
        assert!(sub.delta_x[3..].iter().any(|v| *v != 0.0), "{:?}", sub.delta_x);
        assert!(sub.final_loss < sub.initial_loss);
    }

    #[test]
    fn clipping_keeps_point_in_box() {
        let model = small_model();
        let x = [0.0, 1.0, 0.5, 0.99, 0.01, 0.3];
        let cfg = TrustConfig {
            lr: 0.05,
            max_iters: 200,
            clip_to_unit_box: true,
            ..Default::default()
        };
        let r = trust_score(&model, &x, &cfg).unwrap();
        for (xi, d) in x.iter().zip(&r.delta_x) {
            assert!((0.0..=1.0).contains(&(xi + d)));
        }
    }

    #[test]
    fn zero_feature_is_an_error() {
        // hidden layer with zero weights and biases: every feature vector is zero
        let m = Mlp::from_parts(
            MlpConfig::new(vec![2, 2, 2], 0.0, 0),
            vec![Matrix::zeros(2, 2), Matrix::identity(2)],
            vec![vec![0.0; 2], vec![0.0; 2]],
        )
        .unwrap();
        assert!(matches!(
            trust_score(&m, &[1.0, 1.0], &TrustConfig::default()),
            Err(Error::Degenerate(_))
        ));
        let err = batch_trust_scores(&m, &[vec![1.0, 1.0]], &TrustConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Sample { index: 0, .. }));
    }

    #[test]
    fn feature_layer_out_of_range() {
        let cfg = TrustConfig {
            feature_layer: Some(9),
            ..Default::default()
        };
        assert!(matches!(trust_score(&small_model(), &[0.0; 6], &cfg), Err(Error::Index { .. })));
    }

    #[test]
    fn batch_matches_sequential_for_any_worker_count() {
        let model = small_model();
        let xs: Vec<Vec<f64>> = (0..9)
            .map(|i| (0..6).map(|j| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0).collect())
            .collect();
        let cfg = TrustConfig {
            max_iters: 300,
            ..Default::default()
        };
        let seq: Vec<TrustResult> = xs.iter().map(|x| trust_score(&model, x, &cfg).unwrap()).collect();
        assert_eq!(batch_trust_scores_with_workers(&model, &xs, &cfg, 1).unwrap(), seq);
        assert_eq!(batch_trust_scores_with_workers(&model, &xs, &cfg, 4).unwrap(), seq);
        assert!(batch_trust_scores(&model, &[], &cfg).unwrap().is_empty());
        assert_eq!(batch_trust_scores(&model, &xs[..1], &cfg).unwrap(), seq[..1]);
    }

    #[test]
    fn config_json_uses_field_names() {
        let cfg: TrustConfig = serde_json::from_str(r#"{"T": 100.0, "lambda": 0.1}"#).unwrap();
        assert_eq!(cfg.temperature, 100.0);
        assert_eq!(cfg.lambda, 0.1);
        assert_eq!(cfg.max_iters, 10_000);
        assert!(serde_json::from_str::<TrustConfig>(r#"{"temperature": 1.0}"#).is_err());
        let round: TrustConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(round, cfg);
    }

    #[test]
    fn scores_csv_layout() {
        let r = TrustResult {
            predicted_label: 2,
            delta_x: vec![],
            score: 0.5,
            iterations_run: 10,
            initial_loss: 1.0,
            final_loss: 0.25,
        };
        let mut buf = Vec::new();
        write_scores_csv(&mut buf, &[r], &[1]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "sample_id,true_label,predicted_label,trust_score,iterations,final_loss\n0,1,2,0.5,10,0.25\n"
        );
    }
}
