//! Variational inference with monotone Bernstein-polynomial transformation
//! flows, a Gaussian baseline, and the reference machinery (conjugate
//! posteriors, quadrature, Metropolis sampling) used to judge them.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bernstein;
pub mod diff;
pub mod error;
pub mod flow;
pub mod models;
pub mod oracles;
pub mod vi;

pub use error::{DiffError, FlowError, ModelError, OracleError, ViError};
