//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("matmul inner extents disagree: [{m}x{k}] vs [{k2}x{n}]")]
    MatmulMismatch { m: usize, k: usize, k2: usize, n: usize },

    #[error("{op} expects a rank-{expected} tensor, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },

    #[error("target index {index} out of range for {classes} classes")]
    TargetOutOfRange { index: usize, classes: usize },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("operands belong to different tapes")]
    TapeMismatch,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("non-finite criterion at step {step}")]
    NonFiniteCriterion { step: usize },

    #[error("non-finite gradient for parameter {index}")]
    NonFiniteGradient { index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("component `{0}` is already registered")]
    DuplicateComponent(String),

    #[error("group option `{group}={name}` is already registered")]
    DuplicateGroupOption { group: String, name: String },

    #[error("unknown component `{0}`")]
    UnknownComponent(String),

    #[error("unknown field `{field}` for `{id}`; valid fields: {valid}")]
    UnknownField {
        id: String,
        field: String,
        valid: String,
    },

    #[error("field `{path}` is missing (???) and was not supplied")]
    MissingField { path: String },

    #[error("yaml parse error at line {line}: {msg}")]
    YamlParse { line: usize, msg: String },

    #[error("invalid override `{token}`: {msg}")]
    InvalidOverride { token: String, msg: String },

    #[error("config error at `{path}`: {msg}")]
    ConfigType { path: String, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
