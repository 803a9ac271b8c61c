//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

/// Errors produced anywhere in the correlation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{0}")]
    Domain(String),

    /// A patch interpolation system cannot be solved reliably. Usually the
    /// dilation is too small or too large for the patch node spacing.
    #[error("ill-conditioned patch interpolation: {0}")]
    IllConditioned(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error(
        "solver did not converge after {iterations} iterations \
         (relative residual {residual:.3e})"
    )]
    NoConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("point ({x}, {y}) lies outside the model domain")]
    OutOfDomain { x: f64, y: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable category. Used by the CLI error JSON and
    /// mapped onto status codes by the C API.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Image(_) => "image",
            Error::Config(_) => "config",
            Error::Domain(_) => "domain",
            Error::IllConditioned(_) => "conditioning",
            Error::Singular(_) => "singular",
            Error::NoConvergence { .. } => "convergence",
            Error::OutOfDomain { .. } => "out-of-domain",
        }
    }

    /// Process exit code for the CLI: 2 for i/o, 3 for configuration,
    /// 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Image(_) => 2,
            Error::Config(_) | Error::Domain(_) => 3,
            _ => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
