//! Crate-wide error type.
//!
//! Most numerical routines in this crate are total functions, but a few
//! contracts genuinely fail: a concentration certificate requested outside
//! the validity range of its underlying lemma, a Hessian requested from a
//! piecewise-linear basis, a non-positive-definite Gram matrix handed to an
//! operator-norm computation. Those are hard errors, not warnings — silently
//! extrapolating a certificate past its hypothesis would defeat the point of
//! computing one.

use thiserror::Error;

/// Everything that can go wrong in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violated a documented precondition (dimension mismatch,
    /// empty sample set, duplicate Gaussian centers, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A second-order operator was applied to a basis family without
    /// pointwise second derivatives (piecewise-linear hats) and the
    /// integration-by-parts route was not selected.
    #[error("operation unsupported for this basis family: {0}")]
    Unsupported(String),

    /// A certificate was requested outside the validity range of the
    /// concentration lemma it is based on. The message records both the
    /// requested value and the admissible range.
    #[error("certificate validity violated: {0}")]
    Validity(String),

    /// A linear-algebra routine could not complete (non-PD Gram matrix,
    /// eigen-solver failure beyond recoverable tolerance).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Trajectory integration produced a non-finite state.
    #[error("non-finite state during integration: {0}")]
    NonFinite(String),

    /// Configuration file problems (parse errors, unknown keys, missing
    /// required sections, inconsistent sweep axes).
    #[error("config error: {0}")]
    Config(String),

    /// I/O while reading configs or writing CSV output.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// CSV serialization failure.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: config problems exit 1, everything
    /// that fails at run time exits 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 1,
            _ => 2,
        }
    }
}
