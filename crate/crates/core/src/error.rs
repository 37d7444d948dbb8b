use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("architecture mismatch: {left} vs {right}")]
    ArchMismatch { left: String, right: String },

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite parameter produced during {0}")]
    NonFinite(&'static str),

    #[error("invalid training config: {0}")]
    InvalidTrainConfig(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("{path}: bad IDX magic, expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated IDX file ({detail})")]
    Truncated { path: PathBuf, detail: String },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("invalid partition spec: {0}")]
    InvalidPartition(String),

    #[error("partition failed after {attempts} redraws: {reason}")]
    RedrawLimit { attempts: usize, reason: String },

    #[error("invalid phase plan: {0}")]
    InvalidPhasePlan(String),

    #[error("invalid routing: {0}")]
    InvalidRouting(String),

    #[error("phase/mode inconsistency: {0}")]
    PhaseModeMismatch(String),

    #[error("missing shard for node {0}")]
    MissingShard(usize),

    #[error("centralized round requires a server model")]
    MissingServerModel,

    #[error("{models} models but {shards} shards")]
    CountMismatchModels { models: usize, shards: usize },

    #[error("metric undefined: {0}")]
    MetricUndefined(&'static str),

    #[error("invalid task schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("config parse error: {0}")]
    ConfigParse(#[from] serde_json::Error),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
