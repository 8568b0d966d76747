//! Dense tensors, a reverse-mode gradient tape, losses, Adam and gradient checking.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod tensor;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport, ParamCheck, FD_STEP};
pub use graph::{Graph, NodeId};
pub use params::{GradientRecord, Gradients, ParamGroup, ParamId, ParamStore};
pub use tensor::{cross_entropy, matmul, mse, softmax, Tensor, PROB_FLOOR};
