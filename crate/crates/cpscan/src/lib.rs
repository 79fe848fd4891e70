//! Multivariate change-point scan statistics for short detection windows.
//!
//! This crate implements the likelihood-ratio scan for a recent mean shift in a
//! q-feature daily time series, together with three p-value estimators
//! (an asymptotic tail formula, integration of a multivariate normal model of
//! the transformed scan vector, and direct Monte Carlo), variance diagnostics
//! for the model-based estimator, and two competitor tests (a Hotelling-style
//! per-day statistic and Crosier's multivariate CUSUM) with Monte Carlo
//! calibration.
//!
//! The top-level entry points are [`scan::scan`] for the statistic itself,
//! [`pvalue::full_report`] for the p-value suite on one matrix,
//! [`detect`] for the CSV-in/report-out workflow, and the batch jobs in
//! [`experiments`].

pub mod competitors;
pub mod cov;
pub mod detect;
pub mod experiments;
mod matrix;
pub mod mvn;
pub mod pvalue;
pub mod scan;
pub mod sim;
pub mod specfun;

pub use specfun::Probability;

/// Errors shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument was outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// An iterative numerical routine failed to converge.
    #[error("convergence failure: {0}")]
    Convergence(String),
    /// Root bracketing failed; carries the diagnostic bounds.
    #[error("bracket failure: no sign change on [{lo}, {hi}] (p(lo)={p_lo}, p(hi)={p_hi})")]
    Bracket { lo: f64, hi: f64, p_lo: f64, p_hi: f64 },
    /// Invalid user input (file contents, configuration, CLI arguments).
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// I/O failure wrapping the underlying error.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
