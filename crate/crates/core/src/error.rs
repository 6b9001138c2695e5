use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("invalid path decomposition: {0}")]
    InvalidDecomposition(String),
    #[error("graph is not connected")]
    Disconnected,
    #[error("graph is not a tree")]
    NotATree,
    #[error("instance has no portals")]
    NoPortals,
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("retries exhausted after {attempts} attempts: {detail}")]
    RetriesExhausted { attempts: usize, detail: String },
    #[error("resampling budget exhausted with {residual} clusters unassigned")]
    ResampleBudget { residual: usize, budget: usize },
    #[error("search budget exceeded: {0}")]
    SearchBudget(String),
    #[error("internal check failed: {0}")]
    Internal(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
