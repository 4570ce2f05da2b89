//! Dense tensors, static computation graphs with reverse-mode gradients,
//! optimizers and initializers.

mod graph;
mod init;
mod optim;
mod tensor;

pub use graph::{lse, Axis, Graph, GraphBuilder, Leaves, NodeId, Op, Values};
pub use init::{init_tensor, InitScheme};
pub use optim::{clip_global_norm, global_norm, LrSchedule, Optimizer, OptimizerKind, ParamSet};
pub use tensor::{matmul, Tensor};
