use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Inconsistent widths, block layouts or sweep settings.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("slope fit needs at least two distinct abscissae")]
    DegenerateAbscissa,

    #[error("every input Jacobian is zero; relative gradients are undefined")]
    DegenerateAttribution,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl std::fmt::Display, found: impl std::fmt::Display) -> Self {
        Error::Shape(format!("expected {expected}, found {found}"))
    }
}
