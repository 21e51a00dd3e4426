use std::path::PathBuf;

/// Errors raised across the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty task text")]
    EmptyTaskText,

    #[error("unknown tool `{0}`")]
    UnknownTool(String),

    #[error("unknown tool id {0}")]
    UnknownToolId(u32),

    #[error("episode `{task_id}` step {step}: {message}")]
    BadStep {
        task_id: String,
        step: usize,
        message: String,
    },

    #[error("tool `{tool}` is assigned conflicting categories `{first}` and `{second}`")]
    ConflictingCategory {
        tool: String,
        first: String,
        second: String,
    },

    #[error("embedding dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("quality score {0} outside [0, 1]")]
    QualityOutOfRange(f64),

    #[error("non-finite policy logits")]
    NonFiniteLogits,

    #[error("tool `{0}` has no argument invocations")]
    EmptyInvocationSet(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{}:{line}: {message}", path.display())]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("checkpoint format version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("unknown ablation variant `{name}` (valid: {valid})")]
    UnknownVariant { name: String, valid: String },

    #[error("split `{0}` is empty")]
    EmptySplit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
