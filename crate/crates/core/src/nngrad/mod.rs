//! Minimal dense-tensor math and a reverse-mode gradient engine.
//!
//! Everything is 64-bit floats. The [`Tape`] records primitive ops during a
//! forward pass and replays them backwards for exact gradients; [`MlpParams`]
//! and [`AdamState`] provide the MLP/optimizer layer on top. There is no
//! broadcasting beyond bias rows and no GPU path: the tensors here are small
//! and the point is a dependency-free, auditable substrate.

mod adam;
mod mlp;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use mlp::{init_glorot, mlp_forward, mlp_forward_taped, Layer, MlpNodeIds, MlpParams};
pub use tape::{Grads, NodeId, Tape};
pub use tensor::Tensor;

pub(crate) use tape::{row_norm_ball_kernel, segment_max_kernel, segment_sum_kernel, sigmoid_kernel};
