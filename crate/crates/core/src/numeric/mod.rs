//! Dense tensors, a recorded computation graph and the state-space scan.

mod graph;
pub mod ssm;
mod tensor;

pub use graph::{silu, softmax_rows, Carrier, Gradients, Graph, Node, NodeId, Op};
pub(crate) use graph::sigmoid;
pub use ssm::{ssm_scan, SsmStep, SsmTrace};
pub use tensor::Tensor;
