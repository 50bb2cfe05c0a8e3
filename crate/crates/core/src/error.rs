use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mask has no foreground pixels")]
    EmptyMask,

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("anchor ({x:.3}, {y:.3}) does not lie on a foreground pixel")]
    AnchorOutsideMask { x: f64, y: f64 },

    #[error("no admissible jittered anchor after {0} consecutive rejections")]
    JitterExhausted(usize),

    #[error("degenerate polygon (zero area)")]
    DegeneratePolygon,

    #[error("matrix is not symmetric (max |A - A^T| = {0:e})")]
    Asymmetric(f64),

    #[error("zero or negative diagonal entry at row {0}; Jacobi preconditioner undefined")]
    ZeroDiagonal(usize),

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("trimap has no unknown pixels")]
    NoUnknownPixels,

    #[error("blend region touches the target border")]
    RegionTouchesBorder,

    #[error("blend region is empty")]
    EmptyRegion,

    #[error("placed content falls outside the destination image")]
    OutOfBounds,

    #[error("placement infeasible: {0}")]
    PlacementInfeasible(String),

    #[error("pool has no {0}")]
    EmptyPool(&'static str),

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("duplicate category {0:?}")]
    DuplicateCategory(String),

    #[error("unknown record {0:?}")]
    UnknownRecord(String),

    #[error("unsupported manifest version {0:?}")]
    VersionUnsupported(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("cannot decode {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("cannot encode image: {0}")]
    Encode(String),

    #[error("job {index} failed during {stage}: {source}")]
    Job {
        index: usize,
        stage: &'static str,
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(err: serde_json::Error) -> Self {
        Error::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
