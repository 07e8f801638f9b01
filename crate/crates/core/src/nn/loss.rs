use crate::error::{Error, Result};

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("temperature must be positive, got {t}")))
    }
}

/// Softmax of `logits / t`, computed with max-subtraction.
pub fn softmax_t(logits: &[f64], t: f64) -> Result<Vec<f64>> {
    check_temperature(t)?;
    if logits.is_empty() {
        return Err(Error::Empty("softmax of no logits".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| ((z - max) / t).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    Ok(out)
}

/// `log softmax_t(logits)[target]`, stable for very confident logits.
fn log_prob_t(logits: &[f64], target: usize, t: f64) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse: f64 = logits.iter().map(|z| ((z - max) / t).exp()).sum::<f64>().ln();
    (logits[target] - max) / t - lse
}

/// Temperature-scaled cross-entropy `-ln softmax_t(logits)[target]`.
pub fn cross_entropy_t(logits: &[f64], target: usize, t: f64) -> Result<f64> {
    check_temperature(t)?;
    if target >= logits.len() {
        return Err(Error::Index {
            index: target,
            len: logits.len(),
        });
    }
    Ok((-log_prob_t(logits, target, t)).max(0.0))
}

/// Gradient of [`cross_entropy_t`] with respect to the logits: `(p - e_target) / t`.
pub fn cross_entropy_t_grad(logits: &[f64], target: usize, t: f64) -> Result<Vec<f64>> {
    if target >= logits.len() {
        return Err(Error::Index {
            index: target,
            len: logits.len(),
        });
    }
    let mut g = softmax_t(logits, t)?;
    g[target] -= 1.0;
    g.iter_mut().for_each(|v| *v /= t);
    Ok(g)
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
