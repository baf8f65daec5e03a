use crate::molgraph::{SmilesError, VocabError};
use crate::tensor::{CheckpointError, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HsaError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Smiles(#[from] SmilesError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("model emits {expected} outputs but the targets have width {found}")]
    TargetWidthMismatch { expected: usize, found: usize },
    #[error("invalid toggle combination: {0}")]
    InvalidToggleCombination(String),
    #[error("config: {0}")]
    Config(String),
    #[error("dataset line {line}: {msg}")]
    Dataset { line: usize, msg: String },
}

pub type HsaResult<T> = std::result::Result<T, HsaError>;
