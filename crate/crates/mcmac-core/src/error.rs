//! Error type shared by all modules of the crate.

use alloc::string::String;
use core::fmt;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

/// Errors produced by configuration validation, the rate engine, the
/// solvers, and the time-sharing program.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A configuration or argument violates a documented invariant.
    InvalidInput(String),
    /// A mathematical precondition does not hold (zero noise variance,
    /// empty user subset, non-positive distance, ...).
    Domain(String),
    /// The requested targets cannot be met (zero channel, target outside
    /// the convex hull of candidate rates, divergence guard tripped).
    Infeasible(String),
    /// Iteration limit reached with the residual still above tolerance.
    NotConverged {
        /// Largest relative constraint residual at the final iterate.
        residual: f64,
    },
    /// Tie-cluster enumeration would exceed the candidate-order cap.
    TooManyOrders {
        /// Number of orders the cluster structure would generate.
        required: u128,
        /// Configured cap.
        max: usize,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Infeasible(msg) => write!(f, "infeasible: {msg}"),
            Error::NotConverged { residual } => {
                write!(f, "not converged: residual {residual:.3e} above tolerance")
            }
            Error::TooManyOrders { required, max } => {
                write!(f, "tie clusters generate {required} orders, cap is {max}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
