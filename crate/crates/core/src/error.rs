//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor/layer dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid argument outside of shape concerns (empty sequence, zero dim…).
    #[error("argument error: {0}")]
    Arg(String),

    /// Non-finite values or other numeric failures.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Out-of-bounds access under a reject padding policy.
    #[error("bounds error: {0}")]
    Bounds(String),

    /// Network specification is inconsistent (channel mismatch, bad stride…).
    #[error("spec error: {0}")]
    Spec(String),

    /// Memory/recompute planning cannot satisfy the request.
    #[error("planning error: {0}")]
    Planning(String),

    /// A memory analysis was asked about an unsupported structure.
    #[error("analysis error: {0}")]
    Analysis(String),

    /// Problem size exceeds an exhaustive-search cap.
    #[error("size cap exceeded: {0}")]
    SizeCap(String),

    /// Training diverged (NaN loss or similar), with diagnostics.
    #[error("training error: {0}")]
    Training(String),

    /// File I/O and format problems.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Model/schema validation failure.
    #[error("schema error: {0}")]
    Schema(String),
}

pub type Result<T> = std::result::Result<T, Error>;
