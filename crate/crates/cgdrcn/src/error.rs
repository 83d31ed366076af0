//! Crate-wide error type.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes of the pipeline.
///
/// Shape and domain errors are raised eagerly when an operation is recorded
/// on a graph; file-level variants carry the offending path or record id.
#[derive(Debug)]
pub enum Error {
    /// Tensor extents do not satisfy an operation's contract.
    Shape(String),
    /// A value is outside an operation's mathematical domain (e.g. log of a
    /// non-positive number).
    Domain(String),
    /// The caller violated an API contract (non-scalar backward root,
    /// non-deterministic loss under gradcheck, invalid configuration, ...).
    Usage(String),
    /// A dataset file could not be parsed; includes position information
    /// when available.
    Parse(String),
    /// Records parsed but violated invariants: (record id, violation) pairs.
    Validation(Vec<(String, String)>),
    /// A scene's head budget cannot be placed in the available area.
    Capacity(String),
    /// A checkpoint failed its integrity check.
    Corrupt(String),
    /// A checkpoint is valid but does not match the expected configuration.
    Incompatible(String),
    /// Training produced a non-finite loss.
    Divergence(String),
    /// I/O failure, annotated with the path involved.
    Io { path: String, source: std::io::Error },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Domain(m) => write!(f, "domain error: {m}"),
            Error::Usage(m) => write!(f, "usage error: {m}"),
            Error::Parse(m) => write!(f, "parse error: {m}"),
            Error::Validation(v) => {
                write!(f, "validation failed for {} record(s):", v.len())?;
                for (id, msg) in v {
                    write!(f, "\n  {id}: {msg}")?;
                }
                Ok(())
            }
            Error::Capacity(m) => write!(f, "capacity error: {m}"),
            Error::Corrupt(m) => write!(f, "corrupt checkpoint: {m}"),
            Error::Incompatible(m) => write!(f, "incompatible checkpoint: {m}"),
            Error::Divergence(m) => write!(f, "divergence: {m}"),
            Error::Io { path, source } => write!(f, "io error on {path}: {source}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Exit code the CLI maps this error to: 1 for validation/usage
    /// problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Parse(_) | Error::Validation(_) | Error::Shape(_) => 1,
            _ => 2,
        }
    }
}
