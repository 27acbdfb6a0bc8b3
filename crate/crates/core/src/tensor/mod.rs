//! Deterministic float64 reverse-mode autodiff.
//!
//! Values live on a [`Tape`] that records each operator as it runs. Learnable
//! tensors are owned by a [`ParamStore`] and copied onto the tape on first use;
//! [`Tape::backward`] accumulates their gradients back into the store.

pub mod checkpoint;
pub mod gradcheck;
pub mod gradcheck_suite;
mod kernels;
pub mod optim;
mod param;
mod tape;
mod value;

pub use kernels::ConvGeometry;
pub use optim::{OptimizerConfig, Sgd};
pub use param::{Init, ParamId, ParamStore, Parameter};
pub use tape::{resize_values, softmax_values, ElementwiseOp, Gradients, Tape, Var};
pub use value::Tensor;

#[cfg(test)]
mod tests;
