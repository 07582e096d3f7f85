//! Sparse sufficient dimension reduction for very wide predictor matrices.
//!
//! The central subspace of a categorical (or sliced continuous) response is
//! estimated through an optimal-scoring formulation of sliced inverse
//! regression. A row-wise group penalty on the basis matrix removes whole
//! features from every direction at once, and the penalized least-squares
//! step is solved by ADMM with a closed-form group shrinkage. Wide inputs are
//! handled by split-and-conquer screening: features are partitioned, each
//! partition is fitted independently, and the top rows by norm survive to
//! the next stage.
//!
//! Module map:
//!
//! * [`dataset`] — predictor/phenotype ingestion, centering, synthetic cohorts
//! * [`design`] — slice-indicator response basis `Z` and `D = Z'Z/n`
//! * [`sir`] — eigen-decomposition reference for SIR and subspace metrics
//! * [`admm`] — group shrinkage and the ADMM solver for the penalized step
//! * [`scoring`] — the outer alternating optimal-scoring loop
//! * [`screening`] — staged partition-and-keep feature screening
//! * [`evaluation`] — classifiers, metrics, chi-square baseline, cross-validation

pub mod admm;
pub mod dataset;
pub mod design;
pub mod error;
pub mod evaluation;
pub(crate) mod linalg;
pub mod scoring;
pub mod screening;
pub mod sir;

pub use error::{Result, SdrError};
