//! Over-the-air federated learning with truncated channel inversion under
//! imperfect channel state information.
//!
//! Module map:
//! - [`specfun`]: exponential integral, error functions, unit step.
//! - [`channel`]: correlated true/estimated Rayleigh channels, truncation.
//! - [`aircomp`]: pre-processing, power control, over-the-air aggregation.
//! - [`analysis`]: closed-form coefficient statistics and divergence bounds.
//! - [`optimizer`]: convex truncation-threshold optimization.
//! - [`fltrain`]: desk-scale federated SGD with ideal or over-the-air
//!   aggregation.
//! - [`config`]: the experiment configuration shared with the harness.

// `!(x > 0.0)` is how NaN is rejected alongside nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aircomp;
pub mod analysis;
pub mod channel;
pub mod config;
pub mod error;
pub mod fltrain;
pub mod optimizer;
pub mod quadrature;
pub mod specfun;

pub use error::{Error, Result};
