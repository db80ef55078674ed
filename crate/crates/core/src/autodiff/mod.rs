//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params, GradCheckReport, DEFAULT_PROBES, DEFAULT_STEP};
pub use graph::{shuffle_permutation, Gradients, Graph, Var};
pub use params::{load_checkpoint, save_checkpoint, Bound, CheckpointManifest, ParamId, ParamStore, TensorEntry};
pub use tensor::{Tensor, MAX_DIMS};

#[cfg(test)]
pub(crate) use graph::softplus;

/// Linear operator usable as a graph node; the pullback is the adjoint.
pub trait LinearMap: Send + Sync {
    fn in_shape(&self) -> Vec<usize>;
    fn out_shape(&self) -> Vec<usize>;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn adjoint(&self, y: &[f64]) -> Vec<f64>;
}
