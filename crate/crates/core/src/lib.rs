//! Sparse covariance estimation for dependent time series and the
//! screen-cluster-estimate workflow built on it.
//!
//! - [`matrix`]: symmetric matrices, hard thresholding and norms.
//! - [`covariance`]: panels, sample covariance, Pearson and Spearman matrices.
//! - [`cv`]: time-series cross-validation of the threshold.
//! - [`sim`]: sparse covariance models, dependent panels and index-model responses.
//! - [`pipeline`]: response screening, variable clustering and model specs.
//! - [`groupwise`]: sign-constrained group multiple-index fits.
//! - [`io`]: CSV ingest with transforms, configs and the end-to-end run.
//!
//! ```
//! use sce_core::matrix::{default_labels, SymMatrix};
//!
//! let m = SymMatrix::from_upper_fn(default_labels(3), |i, j| match (i, j) {
//!     _ if i == j => 1.0,
//!     (1, 2) => 0.5,
//!     _ => 0.2,
//! })
//! .unwrap();
//! let t = m.hard_threshold(0.25).unwrap();
//! assert_eq!(t.get(0, 1), 0.0);
//! assert_eq!(t.get(1, 2), 0.5);
//! ```

pub mod constrained;
pub mod covariance;
pub mod cv;
pub mod error;
pub mod groupwise;
pub mod io;
pub mod matrix;
mod par;
pub mod pipeline;
pub mod sim;

pub use error::{Result, SceError};
pub use matrix::SymMatrix;
