use std::path::PathBuf;

use crate::synthlab::TheoremInstance;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure while decoding a GEMB/GHED/CSV file. Binary variants carry the
/// byte offset at which decoding stopped.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("bad magic at byte {offset}: expected {expected:?}, found {found:?}")]
    BadMagic {
        offset: u64,
        expected: [u8; 4],
        found: Vec<u8>,
    },
    #[error("unsupported version {version} at byte {offset}")]
    UnsupportedVersion { offset: u64, version: u32 },
    #[error(
        "truncated payload at byte {offset}: {what} needs {needed} bytes, {available} available"
    )]
    Truncated {
        offset: u64,
        what: &'static str,
        needed: u64,
        available: u64,
    },
    #[error("label out of range at byte {offset}: {kind} label {value} >= {limit}")]
    LabelOutOfRange {
        offset: u64,
        kind: &'static str,
        value: u32,
        limit: u32,
    },
    #[error("size overflow at byte {offset}: {what}")]
    SizeOverflow { offset: u64, what: &'static str },
    #[error("invalid header at byte {offset}: {reason}")]
    InvalidHeader { offset: u64, reason: String },
    #[error("trailing bytes at byte {offset}: {extra} unread")]
    TrailingBytes { offset: u64, extra: u64 },
    #[error("csv line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("parse error in {path}: {source}", path = .path.display())]
    Parse {
        path: PathBuf,
        #[source]
        source: ParseError,
    },
    #[error("degenerate split: part {part} of {parts} is empty (n = {n})")]
    DegenerateSplit { part: usize, parts: usize, n: usize },
    #[error("degenerate stratum: {kind} {stratum} has no rows")]
    DegenerateStratum { kind: &'static str, stratum: usize },
    #[error("missing annotation: {0} labels are not present")]
    MissingAnnotation(&'static str),
    #[error(
        "replacement pool exhausted for group {group}: need {needed} rows, {available} available"
    )]
    PoolExhausted {
        group: usize,
        needed: usize,
        available: usize,
    },
    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },
    #[error("link validity violated: probability {value} outside [0, 1]")]
    LinkValidity { value: f64 },
    #[error("theorem violated: deviation {deviation:e}, gap {gap:e} on {instance:?}")]
    TheoremViolation {
        instance: TheoremInstance,
        deviation: f64,
        gap: f64,
    },
    #[error("io error on {path}: {source}", path = .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for this error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::Parse { .. } => "parse",
            Error::DegenerateSplit { .. } => "degenerate-split",
            Error::DegenerateStratum { .. } => "degenerate-stratum",
            Error::MissingAnnotation(_) => "missing-annotation",
            Error::PoolExhausted { .. } => "pool-exhausted",
            Error::Divergence { .. } => "divergence",
            Error::LinkValidity { .. } => "link-validity",
            Error::TheoremViolation { .. } => "theorem-violation",
            Error::Io { .. } => "io",
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {{
        let holds: bool = $cond;
        if !holds {
            return Err($crate::error::Error::InvalidInput(format!($($arg)+)));
        }
    }};
}
pub(crate) use ensure;
