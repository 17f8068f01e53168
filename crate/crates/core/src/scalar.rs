//! Scalar element types for tensors.
//!
//! Every tensor in one computation graph shares a single element type:
//! `f32` for training speed, `f64` for finite-difference gradient checks.

use std::fmt::{Debug, Display};

/// Floating-point width of a tensor graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    /// 32-bit IEEE-754 floats.
    Single,
    /// 64-bit IEEE-754 floats.
    Double,
}

/// Element type usable by the tensor engine.
pub trait Scalar:
    num_traits::Float + Debug + Display + Send + Sync + 'static
{
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// Numerically stable logistic function.
    fn sigmoid(self) -> Self {
        if self >= Self::zero() {
            Self::one() / (Self::one() + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::one() + e)
        }
    }
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::Single;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::Double;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }
}
