use std::path::PathBuf;

use thiserror::Error;

use crate::domain::Metric;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown metric `{0}` (expected one of itm, odf, ctq, su)")]
    UnknownMetric(String),

    #[error("quality score {0} is outside 0..=100")]
    InvalidScore(i64),

    #[error("pair id is empty")]
    EmptyId,

    #[error("pair `{0}` has an empty caption")]
    EmptyCaption(String),

    #[error("duplicate pair id `{0}`")]
    DuplicateId(String),

    #[error("malformed row {row} in {shard}: {reason}")]
    MalformedRow { shard: String, row: usize, reason: String },

    #[error("pair `{0}` has no dense caption for the text-only path")]
    MissingDenseCaption(String),

    #[error("no score found in model output {0:?}")]
    NoScoreFound(String),

    #[error("score {0} is outside 0..=100")]
    OutOfRange(u64),

    #[error("scorer endpoint unreachable: {0}")]
    EndpointUnreachable(String),

    #[error("scoring {metric} for `{pair_id}` failed: {cause}")]
    ScoreFailed {
        pair_id: String,
        metric: Metric,
        cause: String,
    },

    #[error("vector dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),

    #[error("zero-norm vector")]
    ZeroVector,

    #[error("histogram is empty")]
    EmptyHistogram,

    #[error("no histogram for metric {0}")]
    MissingHistogram(Metric),

    #[error("record `{pair_id}` has no {metric} score")]
    MissingScore { pair_id: String, metric: Metric },

    #[error("invalid filter spec: {0}")]
    InvalidSpec(String),

    #[error("need at least {need} points, have {have}")]
    TooFewPoints { have: usize, need: usize },

    #[error("embedding contains a non-finite value at row {0}")]
    NonFiniteEmbedding(usize),

    #[error("pool `{pool}` has {have} records, {need} requested")]
    InsufficientPool { pool: String, have: usize, need: usize },

    #[error("a variable has zero variance")]
    ZeroVariance,

    #[error("non-finite value for `{0}`")]
    NonFiniteValue(String),

    #[error("need at least 3 samples, have {0}")]
    TooFewSamples(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("bad embedding table: {0}")]
    BadEmbeddingTable(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable identifier used in machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnknownMetric(_) => "UnknownMetric",
            Error::InvalidScore(_) => "InvalidScore",
            Error::EmptyId => "EmptyId",
            Error::EmptyCaption(_) => "EmptyCaption",
            Error::DuplicateId(_) => "DuplicateId",
            Error::MalformedRow { .. } => "MalformedRow",
            Error::MissingDenseCaption(_) => "MissingDenseCaption",
            Error::NoScoreFound(_) => "NoScoreFound",
            Error::OutOfRange(_) => "OutOfRange",
            Error::EndpointUnreachable(_) => "EndpointUnreachable",
            Error::ScoreFailed { .. } => "ScoreFailed",
            Error::DimensionMismatch(..) => "DimensionMismatch",
            Error::ZeroVector => "ZeroVector",
            Error::EmptyHistogram => "EmptyHistogram",
            Error::MissingHistogram(_) => "MissingHistogram",
            Error::MissingScore { .. } => "MissingScore",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::TooFewPoints { .. } => "TooFewPoints",
            Error::NonFiniteEmbedding(_) => "NonFiniteEmbedding",
            Error::InsufficientPool { .. } => "InsufficientPool",
            Error::ZeroVariance => "ZeroVariance",
            Error::NonFiniteValue(_) => "NonFiniteValue",
            Error::TooFewSamples(_) => "TooFewSamples",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::BadEmbeddingTable(_) => "BadEmbeddingTable",
            Error::Io { .. } => "IoError",
            Error::Json(_) => "JsonError",
        }
    }
}
