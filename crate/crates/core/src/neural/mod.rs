//! Dense masking network: forward and backward passes, Adam, model files.

pub mod adam;
pub mod forward;
pub mod gradcheck;
pub mod io;
pub mod layers;
pub mod model;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use forward::{backward, forward, Cache, Gradients, Mode};
pub use io::{load_model, save_model};
pub use model::{Model, Topology};
pub use tensor::{Matrix, Real};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("cache does not belong to a train-mode pass at the model's current step")]
    StaleCache,
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("model file I/O: {0}")]
    IoFailure(#[source] std::io::Error),
    #[error("unsupported model file: {0}")]
    VersionMismatch(String),
    #[error("model file checksum mismatch or truncated file")]
    ChecksumMismatch,
}
