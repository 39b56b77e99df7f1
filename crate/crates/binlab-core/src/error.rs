//! Error type shared across the core numerics.

use alloc::string::String;

/// Failure modes of core operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Operand shapes do not conform.
    #[error("shape error: {0}")]
    Shape(String),
    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),
    /// A statistic that must be invertible is singular (zero sigma, zero gamma).
    #[error("singularity: {0}")]
    Singular(String),
    /// A value that must be finite is NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

pub type Result<T> = core::result::Result<T, Error>;
