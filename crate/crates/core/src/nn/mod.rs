//! Minimal tensor and layer engine for convolutional text classifiers.
//!
//! Everything runs in `f64` on the CPU. Layers keep whatever they need from
//! the forward pass in a [`LayerCache`], and gradients flow back through the
//! same caches, so dropout masks drawn in the forward pass are reused exactly.

mod gradcheck;
mod layer;
mod network;
pub mod ops;
mod optim;
mod tensor;

use thiserror::Error;

pub use gradcheck::{
    check_layer_gradients, check_network_gradients, relative_error, GradCheckConfig,
    GradCheckReport,
};
pub use layer::{Conv, Dense, Layer, LayerCache};
pub use network::{BatchGradients, ForwardTrace, Network, NONSR_CLASS, SR_CLASS};
pub use ops::{bce_grad, bce_loss, conv_forward, dense_forward, dropout, global_max_pool, softmax};
pub use optim::{Optimizer, OptimizerConfig};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active.
    Train,
    /// Dropout is the identity.
    Infer,
}

/// Gradients for every parameter tensor of a network, in the order of
/// [`Network::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub tensors: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(params: &[&[f64]]) -> Self {
        GradientSet {
            tensors: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.tensors.iter_mut().flatten() {
            *v *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}
