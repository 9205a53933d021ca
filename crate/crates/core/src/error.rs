//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible shapes or extents.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// `‖Ax‖` numerically zero: the normalized direction is undefined.
    #[error("degenerate direction: |Ax| = {norm} is below the {threshold} threshold")]
    DegenerateDirection { norm: f64, threshold: f64 },

    /// Parameters unusable (e.g. an all-zero matrix cannot be rescaled).
    #[error("degenerate parameters: {0}")]
    DegenerateParams(String),

    /// A caller-side precondition was violated (non-unit vector, non-finite input).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed input file (bad magic, bad record length).
    #[error("format error: {0}")]
    Format(String),

    /// Structurally valid files that disagree with each other.
    #[error("consistency error: {0}")]
    Consistency(String),

    /// Non-finite parameter or cost detected during training.
    #[error("non-finite value detected while processing minibatch {minibatch}: {detail}")]
    NonFinite { minibatch: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
