//! Dense tensors, scalar activations/losses, and reverse-mode differentiation.

pub mod gradcheck;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use gradcheck::{check_gradients, GradCheckReport, ParamMap};
pub use scalar::{bce_with_logit, huber, huber_grad, relu, sigmoid, softplus};
pub use tape::{GradTape, Gradients, GroupNormArgs, SparseRows, Var};
pub use tensor::Tensor;
