use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulator, oracles and harness.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A problem instance is too large for the requested computation.
    #[error("capacity error: {0}")]
    Capacity(String),

    /// The maintained neighbor counts disagree with the configuration bits.
    #[error("neighbor count mismatch at vertex {vertex}: stored {stored}, recomputed {expected}")]
    Consistency {
        vertex: usize,
        stored: u32,
        expected: u32,
    },

    /// A precondition of a coupled construction does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The single-box process has zero steps per jump.
    #[error(
        "degenerate single-box process: floor(d(1-2p0)) = 0 for d={d}, p={p}; need d >= {min_d}"
    )]
    Degenerate { d: usize, p: f64, min_d: usize },

    /// An experiment description failed validation.
    #[error("invalid experiment spec: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
