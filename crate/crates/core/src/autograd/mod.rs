//! Dense tensors and a small define-by-run autodiff engine.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_with_step, FD_STEP};
pub use tape::{Gradients, Primitive, Tape, Var, LAYER_NORM_EPS, PROB_FLOOR};
pub use tensor::Tensor;

