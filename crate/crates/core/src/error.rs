use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

/// Errors raised by the core algorithms.
///
/// Each variant carries a short human-readable detail; [`Error::kind`] gives a
/// stable machine-readable tag.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate histogram: {0}")]
    DegenerateHistogram(String),
    #[error("invalid size: {0}")]
    InvalidSize(String),
    #[error("insufficient scenes: {0}")]
    InsufficientScenes(String),
    #[error("overcrowded configuration: {0}")]
    Overcrowded(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("data integrity: {0}")]
    DataIntegrity(String),
    #[error("invalid input: {0}")]
    Input(String),
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidPolygon(_) => "invalid-polygon",
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::EmptyInput(_) => "empty-input",
            Error::Shape(_) => "shape",
            Error::DegenerateHistogram(_) => "degenerate-histogram",
            Error::InvalidSize(_) => "invalid-size",
            Error::InsufficientScenes(_) => "insufficient-scenes",
            Error::Overcrowded(_) => "overcrowded",
            Error::State(_) => "state",
            Error::NonFinite(_) => "non-finite",
            Error::DataIntegrity(_) => "data-integrity",
            Error::Input(_) => "input",
        }
    }

    /// The detail text without the kind prefix.
    pub fn detail(&self) -> &str {
        match self {
            Error::InvalidPolygon(d)
            | Error::InvalidParameter(d)
            | Error::EmptyInput(d)
            | Error::Shape(d)
            | Error::DegenerateHistogram(d)
            | Error::InvalidSize(d)
            | Error::InsufficientScenes(d)
            | Error::Overcrowded(d)
            | Error::State(d)
            | Error::NonFinite(d)
            | Error::DataIntegrity(d)
            | Error::Input(d) => d,
        }
    }
}
