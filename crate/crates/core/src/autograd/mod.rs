//! Minimal reverse-mode automatic differentiation over dense tensors.

mod check;
mod checkpoint;
mod graph;
mod optim;
mod params;
mod scalar;
mod tensor;

pub use check::{grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use graph::{Gradients, Graph, Groups, OpKind, Var, NORM_EPS};
pub use optim::Adam;
pub use params::{value_and_grad, value_and_grad_on, Bound, GradMap, Param, ParamStore};
pub use scalar::{gemm, Scalar};
pub use tensor::Tensor;
