//! Small reverse-mode autodiff engine over a fixed op set, with support for
//! differentiating through a recorded backward pass.

mod check;
mod graph;
pub mod kernels;
mod optim;
mod tensor;

pub use check::{grad_check, rel_error, GradCheck, Order};
pub use graph::{Graph, Node, NodeId, Op};
pub use optim::{Parameter, Sgd};
pub use tensor::Tensor;
