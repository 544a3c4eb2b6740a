//! The denoising network and its training machinery.

mod attention;
mod checkpoint;
mod tape;
mod tensor;
mod train;
mod unet;

use thiserror::Error;

pub use attention::{rope2d_attention, AttentionOutput, Rope2d, DEFAULT_ROPE_BASE};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
pub use train::{fit, loss_mse, masked_loss_mse, Adam, FitConfig, LrSchedule, OptimizerConfig, Trainer, TrainingConfig};
pub use unet::{
    init_params, timestep_embedding, AttentionPlacement, Denoiser, DenoiserConfig, DenoiserParams, ForwardTrace,
    LEVELS, SPATIAL_MULTIPLE,
};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("timestep {t} outside 0..={max}")]
    Step { t: usize, max: usize },
    #[error("empty training batch")]
    EmptyBatch,
    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: u64, loss: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint config hash {found:016x} does not match expected {expected:016x}")]
    ConfigHash { expected: u64, found: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
