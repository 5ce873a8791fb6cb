//! Dense tensor primitives with paired reverse-mode rules.
//!
//! There is no autodiff graph. Each forward primitive has a matching
//! `*_backward` function and callers chain them by hand. All kernels use a
//! fixed accumulation order so results are bitwise reproducible.

pub(crate) mod ops;
mod tensor;

pub use ops::{
    cross_entropy, gelu, gelu_backward, matmul, matmul_backward, matmul_nt, matmul_tn, rmsnorm,
    rmsnorm_backward, softmax_rows, softmax_rows_backward, CrossEntropy, DEFAULT_RMS_EPS,
};
pub use tensor::{Real, Tensor};
