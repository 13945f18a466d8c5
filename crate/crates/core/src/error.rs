use alloc::string::String;

/// Errors shared by every module of the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument is outside the domain the operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),
    /// A configuration block violates its invariants.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// A numerical routine did not reach the requested accuracy.
    #[error("numerical failure: {message} (partial estimate {partial})")]
    NumericalFailure { message: String, partial: f64 },
    /// The input is degenerate (e.g. the zero state of a 0-homogeneous map).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    /// A fixed-point iteration failed to converge.
    #[error("no convergence after {iterations} iterations: {message}")]
    NoConvergence { iterations: usize, message: String },
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! domain_err {
    ($($arg:tt)*) => { $crate::error::Error::Domain(alloc::format!($($arg)*)) };
}
macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(alloc::format!($($arg)*)) };
}
pub(crate) use config_err;
pub(crate) use domain_err;
