//! The two densely connected classifier variants and their weight files.

mod config;
mod graph;
mod weights;

pub use config::{ModelConfig, Variant};
pub use graph::mix_seed;
pub use graph::{ModelGraph, ModelObjective, Node, NodeKind, NodeOp};
pub use weights::{WeightSnapshot, FORMAT_VERSION, MAGIC};

use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("input batch shape {actual:?} does not match model input {expected:?}")]
    InputShape { expected: Vec<usize>, actual: Vec<usize> },
    #[error("weights were produced by a different config (fingerprint {found:#018x}, expected {expected:#018x})")]
    Fingerprint { expected: u64, found: u64 },
    #[error("weight file format error: {0}")]
    Format(String),
    #[error("backward called before forward")]
    NoForwardPass,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ModelError {
    pub(crate) fn into_nn(self) -> NnError {
        match self {
            ModelError::Nn(e) => e,
            other => NnError::InvalidArgument(other.to_string()),
        }
    }
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
