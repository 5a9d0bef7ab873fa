use thiserror::Error;

/// Errors raised by the geometry, energy, laminate and solver routines.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violates an operation's precondition.
    #[error("domain error: {0}")]
    Domain(String),
    /// The nearest point of a rotation coset is not unique.
    #[error("projection undefined: conformal part vanishes, nearest rotation is not unique")]
    ProjectionUndefined,
    #[error("not in hull: {0}")]
    NotInHull(String),
    #[error("decomposition not found: {0}")]
    DecompositionNotFound(String),
    /// Invalid configuration; the message names the offending field.
    #[error("config error: {0}")]
    Config(String),
    #[error("point outside envelope box: {0}")]
    OutOfBox(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// The descent produced a non-finite value; `last` is the last finite iterate.
    #[error("descent diverged: {message}")]
    Diverged {
        message: String,
        last: Box<crate::mesh::DeformationField>,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
