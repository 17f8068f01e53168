//! Salient-object-detection toolkit.
//!
//! A from-scratch differentiable tensor engine, an attention-gated U-Net
//! with per-decoder saliency fusion and deep supervision, Adam training on
//! synthetic data, portable-pixmap image IO, and the standard saliency
//! evaluation metrics (MAE, max F-measure, S-measure, E-measure).

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
mod kernels;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod nn;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::{Precision, Scalar};
pub use tensor::Tensor;
