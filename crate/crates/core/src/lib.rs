//! Low-light image enhancement with a curved wavelet attention CNN branch
//! and a reverse-diffusion refinement stage.
//!
//! The crate is self-contained: a small reverse-mode autodiff tensor engine,
//! the network blocks built on it, a synthetic degradation pipeline, image
//! quality metrics, and a training loop. Everything is generic over the
//! scalar type; training runs at f32 while gradient checks run at f64.

pub mod attention;
pub mod checkpoint;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod scalar;
pub mod tensor;
pub mod training;
pub mod wavelet;

pub use error::{Error, Result};
pub use network::{LLCapsModel, Mode, ModelConfig};
pub use scalar::{Dtype, Scalar};
pub use tensor::{no_grad, Shape, Tensor};

/// Training-precision tensor.
pub type Tensor32 = Tensor<f32>;
/// Gradient-check-precision tensor.
pub type Tensor64 = Tensor<f64>;
/// The model at training precision.
pub type Model32 = LLCapsModel<f32>;
/// The model at gradient-check precision.
pub type Model64 = LLCapsModel<f64>;
