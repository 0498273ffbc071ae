//! Conformal prediction intervals for edge weights (traffic loads) on a fixed
//! directed graph.
//!
//! Point predictors are graph autoencoders (GAE, DiGAE) and a line-graph GNN,
//! trained with a small reverse-mode autodiff engine. Split-conformal
//! calibration (CP, CQR and their error-reweighted variants) turns their
//! outputs into intervals with finite-sample marginal coverage, and the
//! [`metrics`] module measures coverage, inefficiency and worst-slice
//! coverage.

pub mod autograd;
pub mod checkpoint;
pub mod conformal;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod rng;
pub mod synthetic;
pub mod tensor;
pub mod tntp;

pub use error::{Error, Result};
