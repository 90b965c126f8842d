//! Dense tensors, sparse products and reverse-mode differentiation.

mod gradcheck;
mod sparse;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use sparse::{spmm_calls_on_this_thread, CsrMatrix};
pub use tape::{Gradients, Parameter, Tape, Var};
pub use tensor::{dropout, dropout_mask, relu, row_log_softmax, row_softmax, Tensor};

pub(crate) use tensor::{argmax, check_dropout};
