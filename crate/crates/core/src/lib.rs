//! Bayesian last-layer networks trained by direct minimisation of the
//! closed-form Bethe free energy.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only the numerical
//! core: a small reverse-mode tape over dense matrices, normal-distribution
//! kernels, the deterministic `tanh` backbone with a Gaussian last layer,
//! every training objective, full-batch Adam with early stopping, the
//! evaluation metrics and the synthetic data generators. File formats and
//! the command-line runner live in the `bethe-bench` crate.
//!
//! ```
//! use bethe_core::special::{log_ndtr, probit_gauss_conv};
//!
//! let p = probit_gauss_conv(1.0, 0.0, 3.0, 1.0).unwrap();
//! assert!((p - 0.5).abs() < 1e-15);
//! assert!(log_ndtr(-30.0).is_finite());
//! ```
#![no_std]
// NaN-rejecting guards are written as `!(x > 0.0)` on purpose
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments
)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod checks;
pub mod data;
mod error;
pub mod linalg;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod special;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Gradient, Matrix, Tape, Var};
