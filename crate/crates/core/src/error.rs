use thiserror::Error;

use crate::distributed::ProtocolError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("width mismatch in {context}: expected {expected}, got {actual}")]
    WidthMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error(
        "stage {upstream} produces {output_width} values but stage {downstream} expects {input_width}"
    )]
    StageWidthMismatch {
        upstream: usize,
        downstream: usize,
        output_width: usize,
        input_width: usize,
    },

    #[error("unknown {kind} tag `{tag}`")]
    UnknownTag { kind: &'static str, tag: String },

    #[error("invalid stage at {location}: {reason}")]
    InvalidStage { location: String, reason: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("index {index} out of range for width {width}")]
    IndexOutOfRange { index: usize, width: usize },

    #[error("exact Shapley guard exceeded: {players} players (limit {limit})")]
    ArityGuard { players: usize, limit: usize },

    #[error("tree {tree} has {active} active features (limit {limit})")]
    TreeGuard {
        tree: usize,
        active: usize,
        limit: usize,
    },

    #[error("baseline set is empty")]
    EmptyBaselineSet,

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("{transform} input {value} outside its domain")]
    TransformDomain { transform: &'static str, value: f64 },

    #[error("bce_loss transform requires a label")]
    MissingLabel,

    #[error("invalid label {0}: expected 0 or 1")]
    InvalidLabel(f64),

    #[error("pipeline must have a scalar output for attribution, found width {0}")]
    NonScalarOutput(usize),

    #[error(
        "efficiency violated at stage {stage}: attributions sum to {sum}, expected {expected}"
    )]
    EfficiencyViolation {
        stage: usize,
        sum: f64,
        expected: f64,
    },

    #[error("stage {stage} output {output} has zero delta but carries attribution {value}")]
    LostAttribution {
        stage: usize,
        output: usize,
        value: f64,
    },

    #[error("report mismatch: {0}")]
    ReportMismatch(String),

    #[error("invalid group spec: {0}")]
    InvalidGroup(String),

    #[error("{what} = {value} out of range ({range})")]
    OutOfRange {
        what: &'static str,
        value: usize,
        range: String,
    },

    #[error("data error at row {row}: {message}")]
    Data { row: usize, message: String },

    #[error("unknown sample id `{0}`")]
    UnknownSample(String),

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error(transparent)]
    Protocol(#[from] ProtocolError),

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn width(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::WidthMismatch {
            context: context.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn invalid_stage(location: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidStage {
            location: location.into(),
            reason: reason.into(),
        }
    }
}
