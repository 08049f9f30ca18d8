//! A transformer variational autoencoder over loop sequences.
//!
//! The encoder summarizes a whole sequence into a Gaussian posterior through
//! a learned aggregate slot. The decoder is a causal transformer that starts
//! from an embedding of the latent code and predicts one loop token per step.
//! At inference time [`decode::DecodeSession`] feeds each emitted token back
//! as the next input and lets callers edit tokens before they are appended.

pub mod check;
pub mod checkpoint;
pub mod config;
pub mod decode;
pub mod losses;
pub mod model;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::ModelConfig;
pub use decode::{DecodeSession, EditOp, EditScript, SessionStatus, StopRule};
pub use model::{LoopDraw, Model, Posterior};
pub use train::{train, EpochLog, TrainOptions};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    Length { len: usize, max: usize },
    #[error("data error: {0}")]
    Data(String),
    #[error(
        "non-finite loss or gradient at epoch {epoch}, step {step}{}",
        last_checkpoint.as_ref().map(|p| format!(" (last good checkpoint: {})", p.display())).unwrap_or_default()
    )]
    NonFinite {
        epoch: usize,
        step: u64,
        last_checkpoint: Option<PathBuf>,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checksum mismatch in tensor `{0}`")]
    Checksum(String),
    #[error("unsupported checkpoint format version {found}")]
    Version { found: u32 },
    #[error("checkpoint config does not match the expected config")]
    ConfigMismatch,
    #[error("session is {0}, not running")]
    State(&'static str),
    #[error("out of range: {0}")]
    Range(String),
    #[error("invalid edit: {0}")]
    Edit(String),
    #[error(transparent)]
    Sequence(#[from] loopforge_core::SequenceError),
    #[error(transparent)]
    Geometry(#[from] loopforge_core::GeometryError),
    #[error(transparent)]
    Nn(#[from] loopforge_nn::NnError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
