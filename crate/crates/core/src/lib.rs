//! RSSI prediction for floating sensor nodes.
//!
//! Received signal strength on a buoy swings with wave motion. This crate
//! fits a linear MMSE predictor that combines the previous RSSI with the
//! current 3-axis acceleration, compares it with a history-only Kalman
//! filter, and feeds the prediction into a transmit-power selector.
//!
//! - [`trace`]: CSV ingestion, resampling, alignment and normalization.
//! - [`distfit`]: histograms, empirical CDFs and quantile maps.
//! - [`estimator`]: normal equations, exact and gradient-descent solvers.
//! - [`kalman`]: scalar Kalman baseline.
//! - [`radio`]: path loss, radio profiles, transmit-power selection.
//! - [`synth`]: seeded synthetic traces with known ground truth.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod distfit;
pub mod estimator;
pub mod kalman;
pub mod linalg;
pub mod radio;
pub mod synth;
pub mod trace;
