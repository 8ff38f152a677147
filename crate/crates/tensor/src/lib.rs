//! Flat tensors plus a replay-graph autodiff engine.
//!
//! The graph records every forward op and expresses backward passes as new
//! graph ops, which keeps gradients differentiable (second-order paths such
//! as gradient penalties need this). Convolutions lower to im2col + GEMM.
//! Batch-level loops run on rayon when the `parallel` feature is enabled
//! (default) and fall back to plain loops otherwise; both paths produce
//! bit-identical results.

mod elem;
pub mod gradcheck;
mod graph;
pub mod init;
pub mod kernels;
mod optim;
pub mod par;
mod tensor;

pub use elem::Elem;
pub use graph::{Graph, NodeId};
pub use optim::Adam;
pub use tensor::Tensor;
