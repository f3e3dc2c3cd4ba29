use thiserror::Error;

/// Errors raised by the solvers, designers and loaders.
#[derive(Debug, Error)]
pub enum DimgError {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configured enumeration cap was exceeded.
    #[error("resource cap exceeded: {what} would exceed the cap of {cap}")]
    Resource { what: String, cap: usize },

    /// The scenario failed validation.
    #[error("invalid model:\n{0}")]
    InvalidModel(crate::model::ValidationReport),

    /// A scenario or configuration document could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    /// Reading or writing a file failed.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A linear program could not be brought to an optimum.
    #[error("linear program failed: {0}")]
    Lp(String),
}

impl DimgError {
    pub fn domain(msg: impl Into<String>) -> Self {
        DimgError::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, DimgError>;
