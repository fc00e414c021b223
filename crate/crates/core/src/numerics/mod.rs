//! Dense tensors, reverse-mode autodiff, and the optimizer.

pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod ops;
pub mod optim;
mod tensor;

pub use gradcheck::{finite_diff_gradcheck, GradcheckReport};
pub use graph::{DropoutStream, Gradients, Graph, Var};
pub use nn::{Mode, Parameterized};
pub use ops::{gelu, layer_norm, matmul, softmax};
pub use optim::{adam_step, clip_global_norm, OptimizerConfig, OptimizerState};
pub use tensor::{Dtype, Tensor};
