//! The deterministic hierarchical forecaster and its training loop.

mod config;
mod flow;
mod train;

pub use config::{LatentConfig, ModelConfig, Role};
pub use flow::{
    FlowModel, LatentBranch, LatentInput, MemoryBuffers, Trace, Variant, TAG_DOWN, TAG_ENCODE,
    TAG_LATENT, TAG_MEMORY, TAG_PHYSICS, TAG_UP,
};
pub use train::{loss, loss_and_grads, rollout, standard_normal, step_loss, train_epoch, Sequence};
