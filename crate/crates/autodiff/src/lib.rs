//! Reverse-mode automatic differentiation over dense `f64` tensors, plus the
//! optimizer stack used for training: Adagrad, global-norm gradient clipping
//! and annealed Gaussian gradient noise.

pub mod checkpoint;
mod error;
pub mod graph;
pub mod optim;
pub mod tensor;

pub use error::AutodiffError;
pub use graph::{grad_check, Graph, NodeId};
pub use optim::{
    adagrad_step, add_gradient_noise, clip_gradients, noise_variance, AdagradState, OptimConfig, Optimizer,
};
pub use tensor::{GradStore, ParamId, ParamSet, Tensor};
