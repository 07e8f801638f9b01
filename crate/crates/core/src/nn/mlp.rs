use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::cross_entropy_t_grad;
use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Architecture of a fully connected ReLU classifier.
///
/// `layer_dims` is `[input, hidden.., classes]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub layer_dims: Vec<usize>,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl MlpConfig {
    pub fn new(layer_dims: Vec<usize>, dropout_rate: f64, seed: u64) -> Self {
        MlpConfig {
            layer_dims,
            dropout_rate,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 3 {
            return Err(Error::Config(format!(
                "need at least one hidden layer, got layer_dims {:?}",
                self.layer_dims
            )));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::Config("layer dimensions must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }
}

/// Fully connected classifier: ReLU on every hidden layer, raw logits out.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub(crate) weights: Vec<Matrix>,
    pub(crate) biases: Vec<Vec<f64>>,
    pub(crate) config: MlpConfig,
}

/// Record of one forward pass.
///
/// `activations[0]` is the input and `activations[l]` the post-ReLU (and, in
/// stochastic mode, post-dropout) output of hidden layer `l`. The last entry
/// of `pre_activations` holds the logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub pre_activations: Vec<Vec<f64>>,
    pub activations: Vec<Vec<f64>>,
    /// Inverted-dropout multipliers (0 or 1/(1-p)) per hidden layer.
    pub dropout_masks: Option<Vec<Vec<f64>>>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &[f64] {
        self.pre_activations.last().expect("trace has at least one layer")
    }

    /// Post-activation vector of `layer`; layer 0 is the input itself.
    pub fn feature(&self, layer: usize) -> Result<&[f64]> {
        self.activations
            .get(layer)
            .map(Vec::as_slice)
            .ok_or(Error::Index {
                index: layer,
                len: self.activations.len(),
            })
    }

    /// Output of the last hidden layer, the default feature space.
    pub fn last_hidden(&self) -> &[f64] {
        self.activations.last().expect("trace has activations")
    }
}

/// Parameter gradients laid out like [`Mlp`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &Mlp) -> Self {
        Gradients {
            weights: model
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            w.as_mut_slice().iter_mut().for_each(|x| *x *= s);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|x| *x *= s);
        }
    }

    /// Flat views in the order `W0, b0, W1, b1, ...`.
    pub fn slices(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }
}

impl Mlp {
    /// He-uniform weights (±√(6/fan_in)) and zero biases, seeded from `config.seed`.
    pub fn new(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in config.layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let values = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            weights.push(Matrix::from_vec(fan_out, fan_in, values)?);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Mlp {
            weights,
            biases,
            config,
        })
    }

    /// Assemble a model from explicit parameters, checking shapes.
    pub fn from_parts(config: MlpConfig, weights: Vec<Matrix>, biases: Vec<Vec<f64>>) -> Result<Self> {
        config.validate()?;
        let layers = config.layer_dims.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::Shape(format!(
                "expected {layers} weight/bias pairs, got {}/{}",
                weights.len(),
                biases.len()
            )));
        }
        for (l, pair) in config.layer_dims.windows(2).enumerate() {
            if weights[l].shape() != (pair[1], pair[0]) || biases[l].len() != pair[1] {
                return Err(Error::Shape(format!(
                    "layer {l}: weight {:?} / bias {} do not match {}->{}",
                    weights[l].shape(),
                    biases[l].len(),
                    pair[0],
                    pair[1]
                )));
            }
        }
        if biases.iter().flatten().any(|b| !b.is_finite()) {
            return Err(Error::Domain("non-finite bias".into()));
        }
        Ok(Mlp {
            weights,
            biases,
            config,
        })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes()
    }

    /// Number of weight layers.
    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    /// Index of the last hidden activation in a [`ForwardTrace`].
    pub fn last_hidden_layer(&self) -> usize {
        self.weights.len() - 1
    }

    /// Flat mutable views in the order `W0, b0, W1, b1, ...`.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
            .collect()
    }

    pub fn param_lens(&self) -> Vec<usize> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice().len(), b.len()])
            .collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Deterministic forward pass; dropout is inactive.
    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        self.run(x, None::<&mut ChaCha8Rng>)
    }

    /// Forward pass with inverted dropout after every hidden activation.
    pub fn forward_stochastic<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<ForwardTrace> {
        self.check_input(x)?;
        self.run(x, Some(rng))
    }

    /// Logits only, without keeping the trace.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w.affine(&a, b)?;
            if l < last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            a = z;
        }
        Ok(a)
    }

    fn run<R: Rng + ?Sized>(&self, x: &[f64], mut rng: Option<&mut R>) -> Result<ForwardTrace> {
        let layers = self.weights.len();
        let p = self.config.dropout_rate;
        let keep_scale = 1.0 / (1.0 - p);
        let mut pre_activations = Vec::with_capacity(layers);
        let mut activations = Vec::with_capacity(layers);
        let mut masks = rng.as_ref().map(|_| Vec::with_capacity(layers - 1));
        activations.push(x.to_vec());

        for l in 0..layers {
            let z = self.weights[l].affine(&activations[l], &self.biases[l])?;
            if l + 1 < layers {
                let mut a: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
                if let (Some(rng), Some(masks)) = (rng.as_deref_mut(), masks.as_mut()) {
                    let mask: Vec<f64> = (0..a.len())
                        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep_scale })
                        .collect();
                    a.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                    masks.push(mask);
                }
                activations.push(a);
            }
            pre_activations.push(z);
        }
        Ok(ForwardTrace {
            pre_activations,
            activations,
            dropout_masks: masks,
        })
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        let layers = self.weights.len();
        let ok = trace.pre_activations.len() == layers
            && trace.activations.len() == layers
            && trace
                .activations
                .iter()
                .zip(&self.config.layer_dims)
                .all(|(a, d)| a.len() == *d)
            && trace
                .pre_activations
                .iter()
                .zip(&self.config.layer_dims[1..])
                .all(|(z, d)| z.len() == *d)
            && trace
                .dropout_masks
                .as_ref()
                .is_none_or(|m| m.len() == layers - 1);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("forward trace does not belong to this model".into()))
        }
    }

    /// Exact gradients of `cross_entropy_t(logits, target, t)` with respect to
    /// every parameter and to the input.
    pub fn backward(&self, trace: &ForwardTrace, target: usize, t: f64) -> Result<(Gradients, Vec<f64>)> {
        self.check_trace(trace)?;
        let dlogits = cross_entropy_t_grad(trace.logits(), target, t)?;
        self.backward_from_logits(trace, &dlogits)
    }

    /// Backpropagate an arbitrary gradient with respect to the logits.
    pub fn backward_from_logits(&self, trace: &ForwardTrace, dlogits: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        self.check_trace(trace)?;
        let mut grads = Gradients::zeros_like(self);
        let input_grad = self.propagate(trace, dlogits, Some(&mut grads))?;
        Ok((grads, input_grad))
    }

    /// Input gradient only; skips the parameter-gradient outer products.
    pub fn input_gradient(&self, trace: &ForwardTrace, dlogits: &[f64]) -> Result<Vec<f64>> {
        self.check_trace(trace)?;
        self.propagate(trace, dlogits, None)
    }

    fn propagate(&self, trace: &ForwardTrace, dlogits: &[f64], mut grads: Option<&mut Gradients>) -> Result<Vec<f64>> {
        if dlogits.len() != self.num_classes() {
            return Err(Error::Shape(format!(
                "logit gradient has {} entries, model has {} classes",
                dlogits.len(),
                self.num_classes()
            )));
        }
        let mut delta = dlogits.to_vec();
        for l in (0..self.weights.len()).rev() {
            if let Some(g) = grads.as_deref_mut() {
                g.weights[l].add_outer(&delta, &trace.activations[l], 1.0);
                g.biases[l].iter_mut().zip(&delta).for_each(|(b, d)| *b += d);
            }
            let mut upstream = self.weights[l].transpose_mul(&delta)?;
            if l > 0 {
                // activations[l] came out of layer l-1's ReLU (and mask)
                let z = &trace.pre_activations[l - 1];
                for (i, u) in upstream.iter_mut().enumerate() {
                    if z[i] <= 0.0 {
                        *u = 0.0;
                    }
                }
                if let Some(masks) = &trace.dropout_masks {
                    upstream.iter_mut().zip(&masks[l - 1]).for_each(|(u, m)| *u *= m);
                }
            }
            delta = upstream;
        }
        Ok(delta)
    }
}
