//! Shape-only evaluators.
//!
//! Each operation's output shape is a pure function of its input shapes.
//! The op constructors route every shape decision through these functions,
//! and the property tests compare them against executed results.

use crate::error::{Error, Result};

/// How the second operand of an elementwise op lines up with the first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Broadcast {
    /// Identical shapes.
    Same,
    /// `b` is a per-channel vector `[C]` applied to `a: [N,C,H,W]`.
    ChannelVec,
    /// `b` is a one-channel map `[N,1,H,W]` applied to `a: [N,C,H,W]`.
    ChannelMap,
}

pub fn ewise_broadcast(a: &[usize], b: &[usize]) -> Result<Broadcast> {
    if a == b {
        return Ok(Broadcast::Same);
    }
    if a.len() == 4 && b.len() == 1 && b[0] == a[1] {
        return Ok(Broadcast::ChannelVec);
    }
    if a.len() == 4
        && b.len() == 4
        && b[0] == a[0]
        && b[1] == 1
        && b[2] == a[2]
        && b[3] == a[3]
    {
        return Ok(Broadcast::ChannelMap);
    }
    Err(Error::Shape(format!(
        "incompatible shapes {:?} vs {:?}",
        a, b
    )))
}

pub fn ewise_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    ewise_broadcast(a, b)?;
    Ok(a.to_vec())
}

pub fn unary_shape(x: &[usize]) -> Vec<usize> {
    x.to_vec()
}

pub fn concat_channels_shape(parts: &[&[usize]]) -> Result<Vec<usize>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Shape("concat of zero parts".into()))?;
    if first.len() != 4 {
        return Err(Error::Shape(format!(
            "concat_channels expects rank-4 N,C,H,W tensors, got rank {}",
            first.len()
        )));
    }
    let mut channels = 0;
    for p in parts {
        if p.len() != 4 || p[0] != first[0] || p[2] != first[2] || p[3] != first[3] {
            return Err(Error::Shape(format!(
                "concat_channels parts disagree on batch/spatial dims: {:?} vs {:?}",
                first, p
            )));
        }
        channels += p[1];
    }
    Ok(vec![first[0], channels, first[2], first[3]])
}

pub fn sum_shape(_x: &[usize]) -> Vec<usize> {
    vec![1]
}

/// Stride-1 same-padding convolution: spatial dims are preserved.
pub fn conv2d_shape(x: &[usize], w: &[usize]) -> Result<Vec<usize>> {
    if x.len() != 4 {
        return Err(Error::Shape(format!(
            "conv2d expects rank-4 input, got {:?}",
            x
        )));
    }
    if w.len() != 4 || w[2] != w[3] {
        return Err(Error::Shape(format!(
            "conv2d expects square [out,in,k,k] weights, got {:?}",
            w
        )));
    }
    if x[1] != w[1] {
        return Err(Error::Shape(format!(
            "conv2d channel mismatch: input has {} channels, layer expects {}",
            x[1], w[1]
        )));
    }
    Ok(vec![x[0], w[0], x[2], x[3]])
}

pub fn batchnorm_shape(x: &[usize], channels: usize) -> Result<Vec<usize>> {
    if x.len() != 4 {
        return Err(Error::Shape(format!(
            "batchnorm expects rank-4 input, got {:?}",
            x
        )));
    }
    if x[1] != channels {
        return Err(Error::Shape(format!(
            "batchnorm channel mismatch: input has {} channels, layer expects {}",
            x[1], channels
        )));
    }
    Ok(x.to_vec())
}

pub fn maxpool2x2_shape(x: &[usize]) -> Result<Vec<usize>> {
    if x.len() != 4 {
        return Err(Error::Shape(format!(
            "maxpool2d expects rank-4 input, got {:?}",
            x
        )));
    }
    if x[2] % 2 != 0 || x[3] % 2 != 0 {
        return Err(Error::Shape(format!(
            "maxpool2d requires even spatial dims, got {}x{}",
            x[2], x[3]
        )));
    }
    Ok(vec![x[0], x[1], x[2] / 2, x[3] / 2])
}

pub fn upsample_shape(x: &[usize], out_h: usize, out_w: usize) -> Result<Vec<usize>> {
    if x.len() != 4 {
        return Err(Error::Shape(format!(
            "upsample expects rank-4 input, got {:?}",
            x
        )));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape(format!(
            "upsample target {}x{} must be at least 1x1",
            out_h, out_w
        )));
    }
    Ok(vec![x[0], x[1], out_h, out_w])
}

pub fn bce_shape(p: &[usize], g: &[usize]) -> Result<Vec<usize>> {
    if p != g {
        return Err(Error::Shape(format!(
            "bce_sum shape mismatch: prediction {:?} vs target {:?}",
            p, g
        )));
    }
    Ok(vec![1])
}
