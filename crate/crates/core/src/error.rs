use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A point or coordinate fell outside the region where an operation is defined.
    #[error("point ({x}, {y}) lies outside the domain {what}")]
    OutOfDomain { x: f64, y: f64, what: &'static str },

    /// Incompatible or invalid geometry.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// A parameter violated its precondition.
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    /// Failure inside the sparse or dense linear solvers.
    #[error("solver error: {message} (residual {residual:.3e})")]
    Solver { message: String, residual: f64 },

    /// Numerical breakdown, e.g. a covariance that is not positive definite.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Input that leaves a computation undefined (all densities underflow, zero truth norm, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// An EM component lost all of its responsibility mass.
    #[error("mixture component {component} collapsed (effective count {effective:.3e})")]
    ComponentCollapse { component: usize, effective: f64 },

    /// Configuration parse or validation failure.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed data file.
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parameter { .. } | Error::Geometry(_) => 2,
            Error::Solver { .. }
            | Error::Numeric(_)
            | Error::Degenerate(_)
            | Error::ComponentCollapse { .. }
            | Error::OutOfDomain { .. } => 3,
            Error::Io { .. } | Error::Format { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
