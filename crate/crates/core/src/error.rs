use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Stable numeric error codes, shared by the CLI diagnostics stream and the C ABI.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCode {
    Ok = 0,
    InvalidGrid = 1,
    GridMismatch = 2,
    InvalidAxis = 3,
    NonFinite = 4,
    NonPositiveDensity = 5,
    InvalidStats = 6,
    EmptyInput = 7,
    SizeMismatch = 8,
    Io = 9,
    Metadata = 10,
    MissingChannel = 11,
    Manifest = 12,
    InvalidFactor = 13,
    DomainTooSmall = 14,
    OutOfCell = 15,
    ZeroTruth = 16,
    NonCubic = 17,
    InvalidArgument = 18,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::Ok => "OK",
            ErrorCode::InvalidGrid => "E_INVALID_GRID",
            ErrorCode::GridMismatch => "E_GRID_MISMATCH",
            ErrorCode::InvalidAxis => "E_INVALID_AXIS",
            ErrorCode::NonFinite => "E_NON_FINITE",
            ErrorCode::NonPositiveDensity => "E_NON_POSITIVE_DENSITY",
            ErrorCode::InvalidStats => "E_INVALID_STATS",
            ErrorCode::EmptyInput => "E_EMPTY_INPUT",
            ErrorCode::SizeMismatch => "E_SIZE_MISMATCH",
            ErrorCode::Io => "E_IO",
            ErrorCode::Metadata => "E_METADATA",
            ErrorCode::MissingChannel => "E_MISSING_CHANNEL",
            ErrorCode::Manifest => "E_MANIFEST",
            ErrorCode::InvalidFactor => "E_INVALID_FACTOR",
            ErrorCode::DomainTooSmall => "E_DOMAIN_TOO_SMALL",
            ErrorCode::OutOfCell => "E_OUT_OF_CELL",
            ErrorCode::ZeroTruth => "E_ZERO_TRUTH",
            ErrorCode::NonCubic => "E_NON_CUBIC",
            ErrorCode::InvalidArgument => "E_INVALID_ARGUMENT",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("axis {0} out of range (expected 1..=3)")]
    AxisOutOfRange(usize),
    #[error("axis {axis} has extent {extent}, need at least {needed}")]
    AxisTooShort {
        axis: usize,
        extent: usize,
        needed: usize,
    },
    #[error("non-finite value at voxel {index}{}", context_suffix(.context))]
    NonFinite { index: usize, context: String },
    #[error("non-positive density {value} at voxel {index}")]
    NonPositiveDensity { index: usize, value: f64 },
    #[error("standard deviation of {channel} must be positive, got {value}")]
    NonPositiveStd { channel: &'static str, value: f64 },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("{path}: expected {expected} bytes, found {actual}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("metadata: {0}")]
    Metadata(String),
    #[error("missing channel {0}")]
    MissingChannel(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("duplicate hash id {0:?} in manifest")]
    DuplicateHash(String),
    #[error("invalid filter factor {0}")]
    InvalidFactor(usize),
    #[error("factor {factor} does not divide extent {extent}")]
    NotDivisible { factor: usize, extent: usize },
    #[error("domain too small: {0}")]
    DomainTooSmall(String),
    #[error("coordinate {0} outside the unit cell")]
    OutOfCell(f64),
    #[error("ground truth is identically zero")]
    ZeroTruth,
    #[error("domain is not cubic: {0}x{1}x{2}")]
    NonCubic(usize, usize, usize),
    #[error("{0}")]
    InvalidArgument(String),
}

fn context_suffix(context: &str) -> String {
    if context.is_empty() {
        String::new()
    } else {
        format!(" in {context}")
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn code(&self) -> ErrorCode {
        match self {
            Error::InvalidGrid(_) => ErrorCode::InvalidGrid,
            Error::GridMismatch(_) => ErrorCode::GridMismatch,
            Error::AxisOutOfRange(_) | Error::AxisTooShort { .. } => ErrorCode::InvalidAxis,
            Error::NonFinite { .. } => ErrorCode::NonFinite,
            Error::NonPositiveDensity { .. } => ErrorCode::NonPositiveDensity,
            Error::NonPositiveStd { .. } => ErrorCode::InvalidStats,
            Error::EmptyInput(_) => ErrorCode::EmptyInput,
            Error::SizeMismatch { .. } => ErrorCode::SizeMismatch,
            Error::Io { .. } => ErrorCode::Io,
            Error::Metadata(_) => ErrorCode::Metadata,
            Error::MissingChannel(_) => ErrorCode::MissingChannel,
            Error::Manifest(_) | Error::DuplicateHash(_) => ErrorCode::Manifest,
            Error::InvalidFactor(_) | Error::NotDivisible { .. } => ErrorCode::InvalidFactor,
            Error::DomainTooSmall(_) => ErrorCode::DomainTooSmall,
            Error::OutOfCell(_) => ErrorCode::OutOfCell,
            Error::ZeroTruth => ErrorCode::ZeroTruth,
            Error::NonCubic(..) => ErrorCode::NonCubic,
            Error::InvalidArgument(_) => ErrorCode::InvalidArgument,
        }
    }
}
