use alloc::string::String;

/// Errors raised by the allocation-only core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("bad magic: expected \"IRAG\"")]
    BadMagic,
    #[error("unsupported index format version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated index data: {0}")]
    Truncated(&'static str),
    #[error("trailing bytes after {0} records")]
    TrailingBytes(u64),
    #[error("index dimension must be positive")]
    ZeroDimension,
    #[error("record id is empty")]
    EmptyId,
    #[error("record id is not valid UTF-8")]
    InvalidId,
    #[error("record id too long for format ({0} bytes)")]
    IdTooLong(usize),
    #[error("duplicate id \"{0}\"")]
    DuplicateId(String),
    #[error("zero-norm vector for id \"{0}\"")]
    ZeroNorm(String),
    #[error("non-finite vector component for id \"{0}\"")]
    NonFinite(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("candidate \"{0}\" has no caption")]
    MissingCaption(String),
    #[error("reference images ({count}) exceed backend cap ({cap})")]
    OverCap { count: usize, cap: usize },
    #[error("concept group \"{0}\" has no images")]
    EmptyGroup(String),
    #[error("invalid retry policy: {0}")]
    InvalidPolicy(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParam(&'static str),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
