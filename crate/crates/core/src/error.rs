use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The single-focal-length model needs fx and fy to agree.
    #[error("focal lengths differ too much for a single-focal model: fx={fx}, fy={fy}")]
    FocalMismatch { fx: f64, fy: f64 },

    #[error("pixel ({x}, {y}) outside {width}x{height} image")]
    OutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("invalid depth: {0}")]
    InvalidDepth(String),

    /// The normal equations are rank deficient or too badly conditioned to trust.
    #[error("degenerate geometry: {count} pixels, condition number {condition:e}")]
    Degenerate { count: usize, condition: f64 },

    #[error("time interval must be positive, got {0}")]
    NonPositiveTime(f64),

    #[error("expected {expected} image, found {found}")]
    ColorSpace {
        expected: &'static str,
        found: &'static str,
    },

    #[error("invalid frame set: {0}")]
    InvalidFrames(String),

    #[error("valid coverage {valid}/{total} below the required fraction")]
    InsufficientCoverage { valid: usize, total: usize },

    #[error("no matched timestamps between prediction and ground truth")]
    NoMatches,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("need at least {needed} poses, got {got}")]
    TooFewPoses { needed: usize, got: usize },

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
