//! Doubly penalized empirical likelihood (PEL) for high-dimensional
//! moment-restriction models on temporally dependent data.
//!
//! The crate estimates a `p`-dimensional parameter identified by `r`
//! estimating equations `E{g_t(theta)} = 0`, where both `r` and `p` may
//! exceed the sample size. Estimation couples an inner penalized dual
//! maximization over the Lagrange multiplier (L1 penalty, interior-point
//! Newton) with an outer proximal ADAM descent over the parameter (SCAD
//! penalty), tuned by a BIC-type criterion. Inference on a low-dimensional
//! coordinate block goes through projected PEL: an L1 projection of the
//! moment Jacobian, a small re-estimated empirical likelihood, and
//! HAC-corrected normal confidence intervals.
//!
//! Modules:
//! - [`penalty`]: SCAD / Lasso penalty values, derivatives, proximal maps.
//! - [`moments`]: moment-model interface plus VAR, local-projection and
//!   BEKK volatility estimating functions.
//! - [`dual`]: inner penalized dual solver and KKT diagnostics.
//! - [`solver`]: outer proximal-ADAM loop, BIC scoring, tuning selection.
//! - [`inference`]: projection rows, HAC long-run covariance, sandwich
//!   standard errors and confidence intervals.
//! - [`simlab`]: data-generating processes, Monte Carlo harness, and the
//!   generalized variance-decomposition connectedness measure.

pub mod data;
pub mod dual;
pub mod error;
pub mod inference;
pub mod init;
pub(crate) mod linalg;
pub mod moments;
pub mod penalty;
pub mod rng;
pub mod simlab;
pub mod solver;

pub use error::{Error, Result};
