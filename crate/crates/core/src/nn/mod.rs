//! A small double-precision training engine: tensors, a fixed layer menu,
//! losses, SGD and checkpoints.
//!
//! Models expose a pure API (`forward_tape` / `backward_tape`) that many
//! threads can use on one immutable model, and a stateful `forward` /
//! `backward` pair for single-threaded use.

pub mod checkpoint;
mod gemm;
pub mod layers;
pub mod loss;
mod model;
pub mod optim;
mod tensor;

pub use checkpoint::{Checkpoint, ModelState, CHECKPOINT_VERSION};
pub use layers::LayerSpec;
pub use loss::{bce_loss, l1_loss, l2_loss};
pub use model::{add_grads, scale_grads, Grads, Model, ModelSpec, Tape};
pub use optim::Sgd;
pub use tensor::Tensor4;
