//! Dense tensors, a reverse-mode tape, MLPs, parameter storage and SGD.

mod checkpoint;
mod graph;
mod mlp;
mod optim;
mod param;
mod tensor;

pub use checkpoint::{
    apply_checkpoint, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint,
    CHECKPOINT_MAGIC,
};
pub use graph::{finite_diff_grad, FlopCounter, Gradients, Graph, Var, UNTAGGED};
pub use mlp::{mlp_forward, Activation, Mlp, MlpSpec};
pub use optim::{optimizer_step, DEFAULT_LR};
pub use param::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
