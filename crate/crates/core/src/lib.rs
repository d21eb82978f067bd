//! Projected CUSUM change-point tests for the second-order structure of
//! high-dimensional linear time series.
//!
//! The covariance of a `d`-dimensional series is summarized through bilinear
//! forms `vᵀ Σ w`; partial sums of the projected products `(vᵀY_i)(wᵀY_i)`
//! drive the CUSUM statistics. The crate contains
//!
//! - [`linproc`]: linear process, spiked covariance and VARMA simulators,
//! - [`projections`]: projection vector constructors,
//! - [`cusum`]: CUSUM trajectories, tests, the CUSUM transform and `Q_n`,
//! - [`lrv`]: lag-window long-run variance estimators and their closed form,
//! - [`dist`]: Kolmogorov law, Brownian bridge quantiles, pseudo-inverse,
//! - [`cpe`]: change-point estimation and binary segmentation,
//! - [`harness`]: Monte Carlo power studies,
//! - [`io`], [`config`], [`cli`]: file formats and the `covcusum` binary.

// `!(x > 0.0)` guards are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod cpe;
pub mod cusum;
pub mod dist;
pub mod error;
pub mod harness;
pub mod io;
pub mod linproc;
pub mod lrv;
pub mod projections;
pub mod seed;

pub use error::{Error, Result};
