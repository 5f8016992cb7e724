//! Dense tensors, seeded randomness, and tape-based gradients.

mod checkpoint;
mod gradcheck;
mod graph;
mod params;
mod rng;
mod scalar;
#[allow(clippy::module_inception)]
mod tensor;

pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, GroupError, Stencil};
pub use graph::{Graph, Var};
pub use params::ParamStore;
pub use rng::{derive_seed, Rng};
pub use scalar::{Precision, Scalar};
pub use tensor::{layer_norm, leaky_relu, matmul, softmax, Tensor};
