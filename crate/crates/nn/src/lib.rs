//! Minimal dense-tensor and reverse-mode differentiation core with the
//! transformer pieces, losses and optimisers used by the facetrank models.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod transformer;

pub use graph::{cross_entropy, log_softmax, sigmoid, weighted_bce, Graph, Var};
pub use optim::{adam_update, plateau_schedule, Adam, AdamConfig, PlateauMode, PlateauScheduler};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::{Real, Tensor};
pub use transformer::{
    CrossMemory, Decoder, DecoderCache, DecoderConfig, DecoderStep, Encoder, EncoderConfig, PAD_ID,
};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("input of length {len} exceeds maximum {max}")]
    TooLong { len: usize, max: usize },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("parameter {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
