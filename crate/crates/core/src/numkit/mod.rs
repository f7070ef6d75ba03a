//! Dense vector math, feedforward networks with explicit backward passes,
//! and first-order optimizers.

mod checkpoint;
mod mat;
mod mlp;
mod optim;

pub use checkpoint::{read_checkpoint, write_checkpoint, MAGIC as CHECKPOINT_MAGIC};
pub use mat::{axpy, dot, norm, Mat};
pub use mlp::{
    grad_check, grad_check_with, mlp_backward, mlp_forward, relative_error, softmax, Activation,
    ForwardCache, Layer, Mlp,
};
pub use optim::{optim_step, OptimKind, OptimState};
