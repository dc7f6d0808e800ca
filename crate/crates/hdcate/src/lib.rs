//! Two-stage estimation of conditional average treatment effects (CATE)
//! under high-dimensional confounding.
//!
//! The first stage fits the nuisance functions (two outcome regressions and
//! the propensity score) by lasso / post-lasso with a plug-in penalty level.
//! The second stage runs local linear regressions of the doubly-robust score
//! on the conditioning coordinate, either over the full sample or with
//! K-fold cross-fitting. Pointwise and uniform confidence bands come from a
//! multiplier bootstrap that reuses the frozen first stage and recomputes
//! only the second stage.
//!
//! Modules:
//! - [`penalized`]: lasso solvers, plug-in penalty, post-lasso refits
//! - [`nuisance`]: the nuisance triple on a designated index set
//! - [`score`]: the doubly-robust transformed outcome
//! - [`local`]: kernel regression, density estimation, bandwidth rule
//! - [`estimator`]: full-sample and cross-fitting CATE curves with variances
//! - [`inference`]: multiplier bootstrap and confidence bands
//! - [`dgp`]: synthetic designs with known truth
//! - [`mc`]: Monte Carlo harness with checkpointing

// Indexed loops mirror the kernel/matrix algebra; `!(x > 0.0)` guards reject
// NaN along with the out-of-range values.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dgp;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod local;
pub mod mat;
pub mod mc;
pub mod norm;
pub mod nuisance;
pub mod penalized;
pub mod rng;
pub mod score;

pub use error::{Error, Result};
