//! Multi-scale graph forecaster for multivariate time series.
//!
//! The model decomposes each lookback window into its dominant periodic
//! scales via FFT, learns one adaptive inter-series graph per scale, runs
//! mixhop graph convolution and within-period self-attention on each scale
//! tensor, and gates the per-scale outputs by their spectral amplitudes
//! before a direct multi-horizon output head.
//!
//! Layering, bottom up:
//! - [`tensor`]: dense f64 arrays with tape-based reverse-mode autodiff.
//! - [`spectral`]: dominant-scale detection and scale-tensor layout.
//! - [`graph`]: adaptive adjacency + mixhop propagation per scale.
//! - [`attention`]: multi-head self-attention over the within-period axis.
//! - [`model`]: embedding, residual scale-graph blocks, output head.
//! - [`train`]: MSE objective, Adam, early stopping, metrics.
//! - [`data`]: CSV ingestion, splits, standardization, window sampling,
//!   synthetic fixtures.

pub mod attention;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod rng;
pub mod spectral;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
