//! Dense ReLU classifier with hand-derived gradients.

mod adam;
pub mod checkpoint;
mod loss;
mod matrix;
mod mlp;

pub use adam::AdamState;
pub use loss::{argmax, cross_entropy_t, cross_entropy_t_grad, softmax_t};
pub use matrix::{dot, norm2, Matrix};
pub use mlp::{ForwardTrace, Gradients, Mlp, MlpConfig};
