use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: cannot read file: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed JSON: {message}")]
    Parse { path: String, message: String },

    #[error("{path}: {record}: {message}")]
    Schema {
        path: String,
        record: String,
        message: String,
    },

    #[error("{path}: {record}: {message}")]
    Integrity {
        path: String,
        record: String,
        message: String,
    },

    #[error("{path}: {record}: negative score {score}")]
    NegativeScore {
        path: String,
        record: String,
        score: f64,
    },

    #[error("dataset contains no ground truth boxes")]
    EmptyDataset,

    #[error("prediction {index}: token {token:?} is not a known class name")]
    UnknownClass { index: usize, token: String },

    #[error("prediction {index}: token {token:?} does not occur in the caption of class {class_id}")]
    TokenNotInCaption {
        index: usize,
        token: String,
        class_id: u64,
    },

    #[error("caption group {group}: missing score for caption {caption}")]
    MissingScore { group: usize, caption: usize },

    #[error("caption {caption:?} contains no palette word")]
    NoAttribute { caption: String },

    #[error("caption {caption:?} admits only {available} distinct negatives, {requested} requested")]
    InsufficientNegatives {
        caption: String,
        available: usize,
        requested: usize,
    },

    #[error("grounding query {query}: no answer box")]
    MissingAnswer { query: usize },

    #[error("grounding query {query}: {count} answer boxes, exactly one expected")]
    MultipleAnswer { query: usize, count: usize },

    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("cluster of {cluster_size} images cannot fit any split (limit {limit:.3} images)")]
    Infeasible { cluster_size: usize, limit: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("embedding cache file: {0}")]
    CacheFormat(String),
}
