//! Dense tensors, structural kernels and a reverse-mode tape.

pub mod kernels;
mod tape;
mod tensor;

pub use kernels::{avgpool2d, normalize_zscore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
