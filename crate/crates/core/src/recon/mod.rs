//! Training-free reconstruction: operator norm estimation, proximal maps
//! and monotone FISTA.

mod fista;
mod power;
mod prox;

pub use fista::{fista, fista_reconstruct, scaled_adjoint, FistaResult, Regularizer, SolverConfig, StepRule};
pub use power::{power_iteration, PowerEstimate, MIN_POWER_ITERS};
pub use prox::{soft_threshold, tv1d_prox, tv2d, tv2d_prox};
