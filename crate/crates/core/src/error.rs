use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not agree.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An argument is outside its permitted range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A value lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller-side precondition was violated.
    #[error("contract error: {0}")]
    Contract(String),

    /// An operation produced a NaN or infinity.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A metric denominator vanished or a sample went non-finite.
    #[error("instability: {0}")]
    Instability(String),

    /// More than half of the samples at one step size were discarded.
    #[error("sweep error at eta={eta:e}: {discarded} of {total} samples discarded")]
    Sweep {
        eta: f64,
        discarded: usize,
        total: usize,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("length error: {0}")]
    Length(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable short name used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Parameter(_) => "parameter",
            Error::Domain(_) => "domain",
            Error::Contract(_) => "contract",
            Error::Numeric(_) => "numeric",
            Error::Instability(_) => "instability",
            Error::Sweep { .. } => "sweep",
            Error::Format(_) => "format",
            Error::Length(_) => "length",
            Error::Consistency(_) => "consistency",
            Error::Checksum { .. } => "checksum",
            Error::UnsupportedVersion(_) => "unsupported_version",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
