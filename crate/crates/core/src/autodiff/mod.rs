//! Reverse-mode differentiation and the Adam optimizer.

mod adam;
mod tape;

pub use adam::{AdamState, DEFAULT_LR};
pub use tape::{
    softmax_slice, topk_count, topk_indices, Activation, Gradients, PoolMode, PoolSpan, Tape, Var,
};
