//! Graph operations: forward constructors and backward rules.

use std::collections::HashMap;

use crate::error::Result;
use crate::kernels::{self, Dims4};
use crate::scalar::Scalar;
use crate::tensor::shape::{self, Broadcast};
use crate::tensor::Tensor;

/// Recorded producer of a tensor, holding handles to its inputs and any
/// saved values its gradient rule needs.
pub(crate) enum Op<T: Scalar> {
    Leaf,
    Add { lhs: Tensor<T>, rhs: Tensor<T> },
    Sub { lhs: Tensor<T>, rhs: Tensor<T> },
    Mul { lhs: Tensor<T>, rhs: Tensor<T> },
    Relu { input: Tensor<T> },
    Sigmoid { input: Tensor<T> },
    Concat { parts: Vec<Tensor<T>> },
    Sum { input: Tensor<T> },
    Scale { input: Tensor<T>, factor: T },
    Conv2d {
        input: Tensor<T>,
        weight: Tensor<T>,
        bias: Tensor<T>,
        pad: usize,
    },
    BatchNorm {
        input: Tensor<T>,
        gamma: Tensor<T>,
        beta: Tensor<T>,
        mean: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    MaxPool { input: Tensor<T>, argmax: Vec<u32> },
    Upsample { input: Tensor<T> },
    BceSum { pred: Tensor<T>, target: Tensor<T> },
}

impl<T: Scalar> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Relu { .. } => "relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Concat { .. } => "concat_channels",
            Op::Sum { .. } => "sum",
            Op::Scale { .. } => "scale",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batchnorm2d",
            Op::MaxPool { .. } => "maxpool2d",
            Op::Upsample { .. } => "upsample_bilinear",
            Op::BceSum { .. } => "bce_sum",
        }
    }

    pub(crate) fn parents(&self) -> Vec<&Tensor<T>> {
        match self {
            Op::Leaf => vec![],
            Op::Add { lhs, rhs } | Op::Sub { lhs, rhs } | Op::Mul { lhs, rhs } => {
                vec![lhs, rhs]
            }
            Op::Relu { input }
            | Op::Sigmoid { input }
            | Op::Sum { input }
            | Op::Scale { input, .. }
            | Op::MaxPool { input, .. }
            | Op::Upsample { input } => vec![input],
            Op::Concat { parts } => parts.iter().collect(),
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            } => vec![input, weight, bias],
            Op::BatchNorm {
                input, gamma, beta, ..
            } => vec![input, gamma, beta],
            // Targets are constants: gradients flow to the prediction only.
            Op::BceSum { pred, .. } => vec![pred],
        }
    }

    pub(crate) fn requires_grad(&self) -> bool {
        self.parents().iter().any(|p| p.requires_grad())
    }
}

/// Elementwise operator selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EwiseOp {
    Add,
    Sub,
    Mul,
}

/// Elementwise op on identical shapes, or with `b` broadcast as a
/// per-channel `[C]` vector or a one-channel `[N,1,H,W]` map.
pub fn ewise<T: Scalar>(op: EwiseOp, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let bcast = shape::ewise_broadcast(a.shape(), b.shape())?;
    let out_shape = a.shape().to_vec();
    let ad = a.data();
    let bd = b.data();
    let apply = |x: T, y: T| match op {
        EwiseOp::Add => x + y,
        EwiseOp::Sub => x - y,
        EwiseOp::Mul => x * y,
    };
    let data: Vec<T> = match bcast {
        Broadcast::Same => ad.iter().zip(bd.iter()).map(|(&x, &y)| apply(x, y)).collect(),
        Broadcast::ChannelVec => {
            let d = Dims4::from_shape(a.shape());
            let plane = d.plane();
            let mut out = Vec::with_capacity(ad.len());
            for pi in 0..d.n * d.c {
                let y = bd[pi % d.c];
                out.extend(ad[pi * plane..][..plane].iter().map(|&x| apply(x, y)));
            }
            out
        }
        Broadcast::ChannelMap => {
            let d = Dims4::from_shape(a.shape());
            let plane = d.plane();
            let mut out = Vec::with_capacity(ad.len());
            for pi in 0..d.n * d.c {
                let n = pi / d.c;
                let bplane = &bd[n * plane..][..plane];
                out.extend(
                    ad[pi * plane..][..plane]
                        .iter()
                        .zip(bplane)
                        .map(|(&x, &y)| apply(x, y)),
                );
            }
            out
        }
    };
    drop(ad);
    drop(bd);
    let record = match op {
        EwiseOp::Add => Op::Add {
            lhs: a.clone(),
            rhs: b.clone(),
        },
        EwiseOp::Sub => Op::Sub {
            lhs: a.clone(),
            rhs: b.clone(),
        },
        EwiseOp::Mul => Op::Mul {
            lhs: a.clone(),
            rhs: b.clone(),
        },
    };
    Ok(Tensor::from_op(out_shape, data, record))
}

/// Concatenate rank-4 tensors along the channel axis; part `k` occupies the
/// contiguous channel band after parts `0..k`.
pub fn concat_channels<T: Scalar>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    let shapes: Vec<&[usize]> = parts.iter().map(|p| p.shape()).collect();
    let out_shape = shape::concat_channels_shape(&shapes)?;
    let (n, plane) = (out_shape[0], out_shape[2] * out_shape[3]);
    let mut data = Vec::with_capacity(out_shape.iter().product());
    for ni in 0..n {
        for p in parts {
            let c = p.shape()[1];
            let pd = p.data();
            data.extend_from_slice(&pd[ni * c * plane..][..c * plane]);
        }
    }
    Ok(Tensor::from_op(
        out_shape,
        data,
        Op::Concat {
            parts: parts.to_vec(),
        },
    ))
}

impl<T: Scalar> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        ewise(EwiseOp::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        ewise(EwiseOp::Sub, self, other)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        ewise(EwiseOp::Mul, self, other)
    }

    pub fn relu(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&x| x.max(T::zero())).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::Relu {
                input: self.clone(),
            },
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&x| x.sigmoid()).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::Sigmoid {
                input: self.clone(),
            },
        )
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum_all(&self) -> Tensor<T> {
        let mut acc = T::zero();
        for v in self.data().iter() {
            acc = acc + *v;
        }
        Tensor::from_op(
            vec![1],
            vec![acc],
            Op::Sum {
                input: self.clone(),
            },
        )
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, factor: T) -> Tensor<T> {
        let data = self.data().iter().map(|&x| x * factor).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::Scale {
                input: self.clone(),
                factor,
            },
        )
    }
}

// ── graph builders for the nn-level ops (called from nn/loss) ────────

pub(crate) fn conv2d_op<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    pad: usize,
) -> Result<Tensor<T>> {
    let out_shape = shape::conv2d_shape(x.shape(), weight.shape())?;
    let d = Dims4::from_shape(x.shape());
    let (cout, k) = (weight.shape()[0], weight.shape()[2]);
    let data = kernels::conv2d_forward(&x.data(), &weight.data(), &bias.data(), d, cout, k, pad);
    Ok(Tensor::from_op(
        out_shape,
        data,
        Op::Conv2d {
            input: x.clone(),
            weight: weight.clone(),
            bias: bias.clone(),
            pad,
        },
    ))
}

pub(crate) fn batchnorm_op<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: Vec<T>,
    inv_std: Vec<T>,
    batch_stats: bool,
) -> Result<Tensor<T>> {
    let out_shape = shape::batchnorm_shape(x.shape(), gamma.numel())?;
    let d = Dims4::from_shape(x.shape());
    let data = kernels::bn_normalize(&x.data(), d, &mean, &inv_std, &gamma.data(), &beta.data());
    Ok(Tensor::from_op(
        out_shape,
        data,
        Op::BatchNorm {
            input: x.clone(),
            gamma: gamma.clone(),
            beta: beta.clone(),
            mean,
            inv_std,
            batch_stats,
        },
    ))
}

pub(crate) fn maxpool_op<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let out_shape = shape::maxpool2x2_shape(x.shape())?;
    let d = Dims4::from_shape(x.shape());
    let (data, argmax) = kernels::maxpool2x2_forward(&x.data(), d);
    Ok(Tensor::from_op(
        out_shape,
        data,
        Op::MaxPool {
            input: x.clone(),
            argmax,
        },
    ))
}

pub(crate) fn upsample_op<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let out_shape = shape::upsample_shape(x.shape(), out_h, out_w)?;
    let d = Dims4::from_shape(x.shape());
    let data = kernels::bilinear_forward(&x.data(), d, out_h, out_w);
    Ok(Tensor::from_op(
        out_shape,
        data,
        Op::Upsample { input: x.clone() },
    ))
}

pub(crate) const BCE_CLAMP: f64 = 1e-7;

pub(crate) fn bce_sum_op<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    let out_shape = shape::bce_shape(pred.shape(), target.shape())?;
    let lo = T::from_f64(BCE_CLAMP);
    let hi = T::one() - lo;
    let mut acc = T::zero();
    for (&p, &g) in pred.data().iter().zip(target.data().iter()) {
        let ph = p.max(lo).min(hi);
        acc = acc - (g * ph.ln() + (T::one() - g) * (T::one() - ph).ln());
    }
    Ok(Tensor::from_op(
        out_shape,
        vec![acc],
        Op::BceSum {
            pred: pred.clone(),
            target: target.clone(),
        },
    ))
}

// ── backward rules ───────────────────────────────────────────────────

fn grad_buf<'a, T: Scalar>(
    table: &'a mut HashMap<u64, Vec<T>>,
    t: &Tensor<T>,
) -> &'a mut Vec<T> {
    table
        .entry(t.id())
        .or_insert_with(|| vec![T::zero(); t.numel()])
}

fn add_slice<T: Scalar>(dst: &mut [T], src: impl Iterator<Item = T>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

/// Reduce a full-shape gradient onto a broadcast `b` operand, optionally
/// weighting by a same-shape factor (the other operand, for products).
fn reduce_to_broadcast<T: Scalar>(
    g: &[T],
    factor: Option<&[T]>,
    a_shape: &[usize],
    bcast: Broadcast,
) -> Vec<T> {
    let term = |i: usize| match factor {
        Some(f) => g[i] * f[i],
        None => g[i],
    };
    match bcast {
        Broadcast::Same => (0..g.len()).map(term).collect(),
        Broadcast::ChannelVec => {
            let d = Dims4::from_shape(a_shape);
            let plane = d.plane();
            let mut out = vec![T::zero(); d.c];
            for pi in 0..d.n * d.c {
                let slot = pi % d.c;
                let mut acc = T::zero();
                for i in pi * plane..(pi + 1) * plane {
                    acc = acc + term(i);
                }
                out[slot] = out[slot] + acc;
            }
            out
        }
        Broadcast::ChannelMap => {
            let d = Dims4::from_shape(a_shape);
            let plane = d.plane();
            let mut out = vec![T::zero(); d.n * plane];
            for pi in 0..d.n * d.c {
                let n = pi / d.c;
                for p in 0..plane {
                    out[n * plane + p] = out[n * plane + p] + term(pi * plane + p);
                }
            }
            out
        }
    }
}

/// Expand the broadcast operand `b` to the full output shape.
fn expand_broadcast<T: Scalar>(b: &[T], a_shape: &[usize], bcast: Broadcast, i: usize) -> T {
    match bcast {
        Broadcast::Same => b[i],
        Broadcast::ChannelVec => {
            let d = Dims4::from_shape(a_shape);
            let plane = d.plane();
            b[(i / plane) % d.c]
        }
        Broadcast::ChannelMap => {
            let d = Dims4::from_shape(a_shape);
            let plane = d.plane();
            let n = i / (d.c * plane);
            b[n * plane + i % plane]
        }
    }
}

pub(crate) fn propagate<T: Scalar>(
    node: &Tensor<T>,
    g: &[T],
    table: &mut HashMap<u64, Vec<T>>,
) {
    match node.op() {
        Op::Leaf => {}
        Op::Add { lhs, rhs } => {
            let bcast = shape::ewise_broadcast(lhs.shape(), rhs.shape()).expect("recorded op");
            if lhs.requires_grad() {
                add_slice(grad_buf(table, lhs), g.iter().copied());
            }
            if rhs.requires_grad() {
                let delta = reduce_to_broadcast(g, None, lhs.shape(), bcast);
                add_slice(grad_buf(table, rhs), delta.into_iter());
            }
        }
        Op::Sub { lhs, rhs } => {
            let bcast = shape::ewise_broadcast(lhs.shape(), rhs.shape()).expect("recorded op");
            if lhs.requires_grad() {
                add_slice(grad_buf(table, lhs), g.iter().copied());
            }
            if rhs.requires_grad() {
                let delta = reduce_to_broadcast(g, None, lhs.shape(), bcast);
                add_slice(grad_buf(table, rhs), delta.into_iter().map(|v| -v));
            }
        }
        Op::Mul { lhs, rhs } => {
            let bcast = shape::ewise_broadcast(lhs.shape(), rhs.shape()).expect("recorded op");
            if lhs.requires_grad() {
                let rd = rhs.data();
                let shape = lhs.shape();
                let delta: Vec<T> = (0..g.len())
                    .map(|i| g[i] * expand_broadcast(&rd, shape, bcast, i))
                    .collect();
                add_slice(grad_buf(table, lhs), delta.into_iter());
            }
            if rhs.requires_grad() {
                let ld = lhs.data();
                let delta = reduce_to_broadcast(g, Some(&ld), lhs.shape(), bcast);
                add_slice(grad_buf(table, rhs), delta.into_iter());
            }
        }
        Op::Relu { input } => {
            if input.requires_grad() {
                let xd = input.data();
                let delta = g
                    .iter()
                    .zip(xd.iter())
                    .map(|(&gv, &x)| if x > T::zero() { gv } else { T::zero() });
                add_slice(grad_buf(table, input), delta);
            }
        }
        Op::Sigmoid { input } => {
            if input.requires_grad() {
                let yd = node.data();
                let delta = g
                    .iter()
                    .zip(yd.iter())
                    .map(|(&gv, &s)| gv * s * (T::one() - s));
                add_slice(grad_buf(table, input), delta);
            }
        }
        Op::Concat { parts } => {
            let (n, plane) = (node.shape()[0], node.shape()[2] * node.shape()[3]);
            let total_c = node.shape()[1];
            let mut offset = 0;
            for p in parts {
                let c = p.shape()[1];
                if p.requires_grad() {
                    let buf = grad_buf(table, p);
                    for ni in 0..n {
                        let src = &g[(ni * total_c + offset) * plane..][..c * plane];
                        let dst = &mut buf[ni * c * plane..][..c * plane];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d = *d + *s;
                        }
                    }
                }
                offset += c;
            }
        }
        Op::Sum { input } => {
            if input.requires_grad() {
                let gv = g[0];
                add_slice(grad_buf(table, input), std::iter::repeat(gv).take(input.numel()));
            }
        }
        Op::Scale { input, factor } => {
            if input.requires_grad() {
                let f = *factor;
                add_slice(grad_buf(table, input), g.iter().map(|&gv| gv * f));
            }
        }
        Op::Conv2d {
            input,
            weight,
            bias,
            pad,
        } => {
            let d = Dims4::from_shape(input.shape());
            let (cout, k) = (weight.shape()[0], weight.shape()[2]);
            if input.requires_grad() {
                let delta = kernels::conv2d_backward_input(g, &weight.data(), d, cout, k, *pad);
                add_slice(grad_buf(table, input), delta.into_iter());
            }
            if weight.requires_grad() {
                let delta = kernels::conv2d_backward_weight(g, &input.data(), d, cout, k, *pad);
                add_slice(grad_buf(table, weight), delta.into_iter());
            }
            if bias.requires_grad() {
                let delta = kernels::conv2d_backward_bias(g, d.n, cout, d.plane());
                add_slice(grad_buf(table, bias), delta.into_iter());
            }
        }
        Op::BatchNorm {
            input,
            gamma,
            beta,
            mean,
            inv_std,
            batch_stats,
        } => {
            let d = Dims4::from_shape(input.shape());
            let (gin, ggamma, gbeta) = kernels::bn_backward(
                g,
                &input.data(),
                d,
                mean,
                inv_std,
                &gamma.data(),
                *batch_stats,
            );
            if input.requires_grad() {
                add_slice(grad_buf(table, input), gin.into_iter());
            }
            if gamma.requires_grad() {
                add_slice(grad_buf(table, gamma), ggamma.into_iter());
            }
            if beta.requires_grad() {
                add_slice(grad_buf(table, beta), gbeta.into_iter());
            }
        }
        Op::MaxPool { input, argmax } => {
            if input.requires_grad() {
                let delta = kernels::maxpool2x2_backward(g, argmax, input.numel());
                add_slice(grad_buf(table, input), delta.into_iter());
            }
        }
        Op::Upsample { input } => {
            if input.requires_grad() {
                let d = Dims4::from_shape(input.shape());
                let (oh, ow) = (node.shape()[2], node.shape()[3]);
                let delta = kernels::bilinear_backward(g, d, oh, ow);
                add_slice(grad_buf(table, input), delta.into_iter());
            }
        }
        Op::BceSum { pred, target } => {
            if pred.requires_grad() {
                let lo = T::from_f64(BCE_CLAMP);
                let hi = T::one() - lo;
                let gv = g[0];
                let pd = pred.data();
                let td = target.data();
                let delta = pd.iter().zip(td.iter()).map(|(&p, &t)| {
                    if p > lo && p < hi {
                        gv * ((T::one() - t) / (T::one() - p) - t / p)
                    } else {
                        T::zero()
                    }
                });
                add_slice(grad_buf(table, pred), delta);
            }
        }
    }
}
