use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A single configuration problem, tagged with the key path it refers to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub key: String,
    pub message: String,
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("schema error in record {index}: missing or invalid field `{field}`")]
    Schema { index: usize, field: String },

    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("parse error on line {line}: {message}")]
    ParseLine { line: usize, message: String },

    #[error("revision ordering error in `{title}`: {message}")]
    Ordering { title: String, message: String },

    #[error("no revision history for title `{0}`")]
    MissingHistory(String),

    #[error("endpoint error: {0}")]
    Endpoint(String),

    #[error("endpoint timed out: {0}")]
    Timeout(String),

    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no gold title has same-title corpus content")]
    NoScorableTitle,

    #[error("empty needle")]
    EmptyNeedle,

    #[error("corpus blob of {len} bytes exceeds the configured maximum of {max}")]
    Capacity { len: u64, max: u64 },

    #[error("malformed index file: {0}")]
    IndexFormat(String),

    #[error("no prompt template for {0}")]
    TemplateMissing(String),

    #[error("prompt precondition violated: {0}")]
    PromptInput(String),

    #[error("title `{0}` is not part of the instance context")]
    UnknownTitle(String),

    #[error("no question-only record for instance `{instance_id}` under `{llm_id}`")]
    MissingProbe { llm_id: String, instance_id: String },

    #[error("trend fit needs at least 2 distinct points, got {0}")]
    InsufficientPoints(usize),

    #[error("group `{0}` has no defined trend")]
    EmptyGroup(String),

    #[error("item `{0}` has annotator disagreement but no adjudication")]
    MissingAdjudication(String),

    #[error("invalid configuration:\n{}", .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Config(Vec<ConfigIssue>),

    #[error("stale input: {} does not match its recorded digest", path.display())]
    StaleInput { path: PathBuf },

    #[error("missing upstream output {}; run stage `{stage}` first", path.display())]
    MissingUpstream { stage: String, path: PathBuf },

    #[error("endpoint failure budget exceeded: {failures} failures (budget {budget})")]
    FailureBudget { failures: usize, budget: usize },

    #[error("output directory {} is locked by another run", path.display())]
    Locked { path: PathBuf },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config(vec![ConfigIssue {
            key: key.into(),
            message: message.into(),
        }])
    }
}
