use std::path::PathBuf;

use thiserror::Error;

/// Reasons a binary PGM file can be rejected.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PgmError {
    #[error("bad magic number, expected P5")]
    BadMagic,
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported maxval {0}, only 255 is accepted")]
    UnsupportedMaxval(u32),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Pgm {
        path: PathBuf,
        #[source]
        source: PgmError,
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("singular affine transform (|det| = {0:e})")]
    Singular(f64),
    #[error("sub-template is empty: ball does not fit inside a {width}x{height} template")]
    DegenerateSubTemplate { width: usize, height: usize },
    #[error("every net transform maps the sub-template outside the image")]
    EmptyNet,
    #[error("could not sample a feasible transform after {0} draws")]
    InfeasibleSpec(usize),
    #[error("search space of {0} transforms exceeds the brute-force limit")]
    TooLarge(u64),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// True for errors caused by the environment (files, formats) rather
    /// than by invalid arguments.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Pgm { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
