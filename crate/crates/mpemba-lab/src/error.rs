//! Crate-wide error type.

use crate::spectrum::RegionTag;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid control parameters: {0}")]
    InvalidParams(String),

    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A closed-form requested for a region it does not apply to.
    #[error("closed form requires region {expected:?}, post-quench point classifies as {found:?}")]
    WrongRegion { expected: RegionTag, found: RegionTag },

    /// The post-quench point is off the equal-gap line required by the
    /// region-(b) quadratic closed form.
    #[error("gap-ratio constraint violated: {0}")]
    OffGapLine(String),

    /// Eigenvalue gap too small for a gap-dependent closed form.
    #[error("degenerate eigenvalue gap: {0}")]
    DegenerateGap(String),

    /// A logarithm of a (near-)singular density matrix was requested.
    #[error("degenerate state: {0}")]
    DegenerateState(String),

    #[error("configuration error in field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code the CLI maps this error to: config/IO errors exit
    /// with 1, domain and wrong-region errors with 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Io(_) | Error::Json(_) => 1,
            _ => 2,
        }
    }
}
