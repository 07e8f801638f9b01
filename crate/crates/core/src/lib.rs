//! Test-time confidence scores from nearest-mode optimization.
//!
//! [`trust`] scores a sample by optimizing a sparse input perturbation toward
//! the classifier's prediction and measuring how far the features turn.
//! [`metrics`] ranks predictions by any such score (AURC, AUSE, accuracy at
//! top-k%). The remaining modules supply the classifier, data, baselines
//! and simulation checks.

pub mod baselines;
pub mod data;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod nn;
pub mod shift;
pub mod training;
pub mod trust;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/shift.md")]
    mod shift {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
