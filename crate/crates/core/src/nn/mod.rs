//! Minimal differentiable-network substrate.

pub mod gradcheck;
mod im2col;
pub mod layers;
pub mod loss;
mod network;
pub mod optim;
mod scalar;
mod tensor;

pub use gradcheck::{grad_check, grad_report, input_grad_check, GradReport, LossKind};
pub use layers::LayerSpec;
pub use network::{infer_shapes, Mode, Network};
pub use optim::{Optimizer, OptimizerConfig};
pub use scalar::{Precision, Scalar};
pub use tensor::Tensor;
