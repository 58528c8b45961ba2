//! Minimal reverse-mode automatic differentiation.
//!
//! Programs are recorded on a [`Tape`] of matrix-valued nodes built from a
//! small set of primitives (affine maps, gelu, tanh, exp, log, sums,
//! elementwise products, squared norms and scalar ops) and differentiated
//! with respect to a flat [`ParameterVector`].

mod params;
mod program;
pub mod scalar;
mod tape;

pub use params::{GradientResult, ParameterVector, Segment};
pub use program::{
    evaluate, evaluate_slice_with_gradient, evaluate_with_gradient, finite_difference_gradient,
    max_relative_error, Expr, Func, Program,
};
pub use scalar::gelu;
pub use tape::{log_sum_exp_with_floor, Tape, Var};
