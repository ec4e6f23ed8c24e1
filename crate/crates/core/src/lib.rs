//! Deep direct Koopman (DDK) identification of vehicle dynamics and an
//! incremental condensed-QP model-predictive controller built on the
//! learned latent linear model.
//!
//! The crate is organised bottom-up:
//!
//! - [`sim`]: nonlinear dynamic-bicycle plant and excitation-driven data collection
//! - [`nn`]: dense MLPs, a matrix-level reverse-mode tape, Adam
//! - [`koopman`]: eigenvalue-parameterised transition matrix, lifting, latent rollout, decoding
//! - [`train`]: coordinate transforms, normalization, batching, losses and the training loop
//! - [`mpc`]: augmented incremental model, prediction matrices, condensed QP, ADMM solver,
//!   closed-loop tracking and the pure-pursuit baseline
//! - [`eval`]: prediction RMSE and tracking-error reports

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod koopman;
pub mod mpc;
pub mod nn;
pub mod sim;
pub mod train;
pub mod util;

pub use error::{DdkError, Result};
