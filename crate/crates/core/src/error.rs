use thiserror::Error;

use crate::contract::ContractError;

pub type Result<T, E = EmasError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EmasError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("no neighbour available")]
    NoNeighbor,

    #[error("empty meeting")]
    EmptyMeeting,

    #[error("invalid meeting: {0}")]
    Meeting(String),

    #[error(transparent)]
    Contract(#[from] ContractError),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("unknown problem: {0}")]
    UnknownProblem(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("wire format error: {0}")]
    Wire(String),

    #[error("island {0} panicked")]
    IslandPanicked(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
