//! Deterministic `f32` tensor arithmetic with reverse-mode differentiation.
//!
//! The op set is deliberately small: 3x3 (or any square) convolutions with
//! stride and zero padding, transposed convolutions, dense layers, ReLU,
//! reshapes, softmax, fused softmax cross-entropy, MSE, elementwise
//! add/sub/mul and reductions. That is everything the classifier and the
//! denoising autoencoder need, plus input gradients for the attacks.

pub mod gradcheck;
pub mod kernels;
pub mod tape;
pub mod tensor;

pub use gradcheck::{finite_diff_grad, max_relative_error};
pub use tape::{ConvSpec, Gradients, Tape, Var};
pub use tensor::{argmax, pairwise_sum, sign, softmax, softmax_rows, Tensor};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("expected a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("variable is not recorded on this tape")]
    NotOnTape,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
