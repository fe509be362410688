//! Robust state estimation under heavy-tailed noise with the multi-kernel
//! mixture correntropy (MKMC) criterion.
//!
//! The crate is organised bottom-up:
//!
//! * [`kernel`] evaluates the Student's t / Cauchy mixture and the baseline
//!   Gaussian kernels, and turns whitened residuals into weight matrices.
//! * [`filter`] holds the local robust EKF: prediction, the whitened
//!   regression form, fixed-point reweighting, Joseph covariance and gating.
//! * [`tuning`] picks kernel centers, bandwidths and the mixture coefficient
//!   from a window of recent residuals.
//! * [`consensus`] provides Metropolis weights, consensus averaging and the
//!   information-form fusion step.
//! * [`network`] ties it all together into a per-time-step distributed filter.
//! * [`models`] contains the IEEE 14-bus and land-vehicle benchmark plants and
//!   the noise generators used to drive them.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod consensus;
pub mod error;
pub mod filter;
pub mod kernel;
pub mod linalg;
pub mod models;
pub mod network;
pub mod tuning;

pub use error::{Error, Result};
