//! Dense tensors with reverse-mode differentiation, plus the optimizer,
//! schedule, loss helpers and checkpoint format used to train the model.

pub mod checkpoint;
pub mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use optim::{l2_penalty, lr_schedule, mse_loss, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
