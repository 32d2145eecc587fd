use thiserror::Error;

/// Errors produced by the numerical modules and the CLI driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("size limit exceeded: {what} = {got}, maximum {max}")]
    SizeLimit {
        what: &'static str,
        got: usize,
        max: usize,
    },

    #[error("dimension mismatch: {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("distribution not normalized: total mass {0}")]
    NotNormalized(f64),

    #[error("matrix is not symmetric: max asymmetry {0:e}")]
    NonSymmetric(f64),

    #[error("matrix is not positive definite: min eigenvalue {0:e}")]
    NotPositiveDefinite(f64),

    #[error("singular map: |det| = {0:e}")]
    Singular(f64),

    #[error("point {0:?} lies outside the grid support")]
    OutsideSupport(Vec<f64>),

    #[error("target density vanishes at image point {0:?}")]
    VanishingDensity(Vec<f64>),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dims(context: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            got,
        }
    }

    /// Short machine-readable tag for the error family.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::SizeLimit { .. } => "size_limit",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidInput(_) => "invalid_input",
            Error::Empty(_) => "empty_input",
            Error::NotNormalized(_) => "not_normalized",
            Error::NonSymmetric(_) => "non_symmetric",
            Error::NotPositiveDefinite(_) => "not_positive_definite",
            Error::Singular(_) => "singular",
            Error::OutsideSupport(_) => "outside_support",
            Error::VanishingDensity(_) => "vanishing_density",
            Error::Degenerate(_) => "degenerate",
            Error::Numerical(_) => "numerical",
            Error::Config(_) => "config",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
