use crate::error::{Error, Result};

/// Adam moment estimates for a list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Zeroed state with the usual defaults (0.9, 0.999, 1e-8).
    pub fn new(lens: &[usize]) -> Self {
        AdamState {
            first_moment: lens.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: lens.iter().map(|&n| vec![0.0; n]).collect(),
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Per-coordinate step size `lr / (√v̂ + ε)` of tensor `index` after the last update.
    pub fn effective_lr(&self, index: usize, lr: f64) -> Vec<f64> {
        let c2 = 1.0 - self.beta2.powi(self.step_count.max(1) as i32);
        self.second_moment[index]
            .iter()
            .map(|v| lr / ((v / c2).sqrt() + self.epsilon))
            .collect()
    }

    /// One bias-corrected Adam update of `params` against `grads`.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "adam holds {} tensors, got {} params / {} grads",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first_moment) {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::Shape(format!(
                    "adam tensor of {} entries, got param {} / grad {}",
                    m.len(),
                    p.len(),
                    g.len()
                )));
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);

        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
