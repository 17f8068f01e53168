//! Neural layers: 2-D convolution, batch normalization, max pooling,
//! bilinear upsampling, and He initialization.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kernels::{self, Dims4};
use crate::scalar::Scalar;
use crate::tensor::shape;
use crate::tensor::{ops, Tensor};

/// Forward-pass mode. Train mode uses (and updates) batch statistics in
/// batchnorm; eval mode is pure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Stride-1 convolution with "same" zero padding; kernel size 1 or 3.
pub struct Conv2d<T: Scalar> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Result<Self> {
        if kernel != 1 && kernel != 3 {
            return Err(Error::Config(format!(
                "conv kernel must be 1 or 3, got {kernel}"
            )));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::Config("conv channel counts must be positive".into()));
        }
        Ok(Conv2d {
            in_channels,
            out_channels,
            kernel,
            weight: Tensor::zeros([out_channels, in_channels, kernel, kernel]),
            bias: Tensor::zeros([out_channels]),
        })
    }

    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::conv2d_op(x, &self.weight, &self.bias, self.padding())
    }
}

/// He-normal weights (std `sqrt(2 / fan_in)`), zero biases; deterministic
/// for a given generator state.
pub fn init_he<T: Scalar, R: Rng>(layer: &Conv2d<T>, rng: &mut R) {
    let fan_in = (layer.in_channels * layer.kernel * layer.kernel) as f64;
    let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
    {
        let mut w = layer.weight.data_mut();
        for v in w.iter_mut() {
            *v = T::from_f64(normal.sample(rng));
        }
    }
    let mut b = layer.bias.data_mut();
    for v in b.iter_mut() {
        *v = T::zero();
    }
}

/// Per-channel batch normalization over the N,H,W axes.
pub struct BatchNorm2d<T: Scalar> {
    pub channels: usize,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            channels,
            gamma: Tensor::full([channels], T::one()),
            beta: Tensor::zeros([channels]),
            running_mean: Tensor::zeros([channels]),
            running_var: Tensor::full([channels], T::one()),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    /// Train mode normalizes by batch statistics and folds them into the
    /// running estimates; eval mode normalizes by the running estimates
    /// without touching any state.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        shape::batchnorm_shape(x.shape(), self.channels)?;
        let d = Dims4::from_shape(x.shape());
        let eps = T::from_f64(self.eps);
        let (mean, inv_std, batch_stats) = match mode {
            Mode::Train => {
                let (mean, var) = kernels::bn_batch_stats(&x.data(), d);
                let inv_std: Vec<T> =
                    var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                self.update_running(&mean, &var, d.n * d.plane());
                (mean, inv_std, true)
            }
            Mode::Eval => {
                let mean = self.running_mean.to_vec();
                let inv_std: Vec<T> = self
                    .running_var
                    .data()
                    .iter()
                    .map(|&v| T::one() / (v + eps).sqrt())
                    .collect();
                (mean, inv_std, false)
            }
        };
        ops::batchnorm_op(x, &self.gamma, &self.beta, mean, inv_std, batch_stats)
    }

    fn update_running(&self, mean: &[T], var: &[T], m: usize) {
        let mom = T::from_f64(self.momentum);
        let keep = T::one() - mom;
        // Running variance uses the unbiased estimate, matching the common
        // train/eval convention.
        let correction = if m > 1 {
            T::from_f64(m as f64 / (m as f64 - 1.0))
        } else {
            T::one()
        };
        let mut rm = self.running_mean.data_mut();
        let mut rv = self.running_var.data_mut();
        for c in 0..self.channels {
            rm[c] = keep * rm[c] + mom * mean[c];
            rv[c] = keep * rv[c] + mom * var[c] * correction;
        }
    }
}

/// 2x2 max pooling with stride 2. Requires even spatial dims; gradient
/// routes to each window's first maximum in row-major order.
pub fn maxpool2d<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    ops::maxpool_op(x)
}

/// Bilinear resampling with half-pixel centers.
pub fn upsample_bilinear<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    ops::upsample_op(x, out_h, out_w)
}

/// conv -> batchnorm -> relu, the building brick of every block.
pub struct ConvBnRelu<T: Scalar> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
}

impl<T: Scalar> ConvBnRelu<T> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Result<Self> {
        Ok(ConvBnRelu {
            conv: Conv2d::new(in_channels, out_channels, kernel)?,
            bn: BatchNorm2d::new(out_channels),
        })
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        Ok(self.bn.forward(&self.conv.forward(x)?, mode)?.relu())
    }
}
