//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! A [`Tape`] owns every value produced during a forward pass. Parameters
//! enter as leaves with `requires_grad`; after [`Tape::backward`] their
//! gradients are read back with [`Tape::grad`]. Tapes are cheap to build,
//! so callers create a fresh one per step.

mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_at};
pub use tape::{Elementwise, LossKind, Operand, Tape, Var};
pub use tensor::Tensor;
