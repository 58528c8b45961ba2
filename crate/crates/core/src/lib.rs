//! Conditional push-forward neural networks.
//!
//! A CPFN is a stochastic map `phi(x, u)` trained so that `phi(x, U)` follows
//! the conditional law of `Y | X = x`. This crate provides the model, its
//! kernel-smoothed likelihood training, inference (sampling, densities,
//! quantiles), a kernel conditional density baseline, and the evaluation
//! metrics and synthetic processes used to benchmark them.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod harness;
pub mod inference;
pub mod kcde;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod simulators;
pub mod training;

pub use error::{Error, Result};
pub use linalg::Matrix;
