//! Dense `f64` tensors, a reverse-mode tape and plain SGD.

mod param;
mod tape;
mod tensor;

pub use param::{read_tensors, sgd_step, write_tensor, Bindings, ParamId, ParamSet, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::sigmoid;
