//! Logarithmic mean squared error (LMSE) and the flip-and-log loss
//! transform, with the machinery to train a small convolutional auto-encoder
//! for one-class anomaly detection and to check the loss's analytic
//! properties numerically.
//!
//! Module map:
//! - [`tensor`], [`optim`]: reverse-mode autodiff and gradient-descent updates
//! - [`losses`]: MSE, MAE, MSLE, LMSE, the FL transform, analytic gradients,
//!   and loss/gradient surface grids
//! - [`data`]: IDX dataset loading and one-class task construction
//! - [`model`]: the convolutional auto-encoder
//! - [`metrics`]: anomaly scores, AUROC, convergence statistics
//! - [`harness`]: training loop, paired grid search, table and CSV outputs
//! - [`verify`]: numeric checks of convexity, stationarity, series and gradients

// `!(x > 0.0)` style checks are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
