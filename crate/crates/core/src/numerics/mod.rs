//! Dense tensors and reverse-mode differentiation for the encoder and heads.

mod norm;
mod tape;
mod tensor;


pub use norm::{batch_norm_1d, BatchNormState, NormMode, DEFAULT_EPSILON, DEFAULT_MOMENTUM};
pub use tape::{gelu, Activation, Gradients, NormStats, RecordEntry, Tape, Var};
pub use tensor::Tensor;
