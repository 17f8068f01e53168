//! Additive attention gate.
//!
//! Reweights an encoder skip feature with a spatial coefficient map derived
//! from a decoder gating signal: the query and key paths each run a 1x1
//! conv -> batchnorm -> relu, their sum passes through relu, and a final
//! 1x1 conv -> batchnorm -> sigmoid yields a one-channel map V in (0,1)
//! that multiplies the skip feature across all of its channels.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{init_he, BatchNorm2d, Conv2d, Mode};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub struct AttentionGate<T: Scalar> {
    pub conv_q: Conv2d<T>,
    pub bn_q: BatchNorm2d<T>,
    pub conv_k: Conv2d<T>,
    pub bn_k: BatchNorm2d<T>,
    pub conv_psi: Conv2d<T>,
    pub bn_psi: BatchNorm2d<T>,
    pub f_int: usize,
}

impl<T: Scalar> AttentionGate<T> {
    /// `gate_channels` is the gating-signal width, `skip_channels` the skip
    /// feature width; the intermediate width is half the skip width.
    pub fn new(gate_channels: usize, skip_channels: usize) -> Result<Self> {
        let f_int = (skip_channels / 2).max(1);
        Ok(AttentionGate {
            conv_q: Conv2d::new(gate_channels, f_int, 1)?,
            bn_q: BatchNorm2d::new(f_int),
            conv_k: Conv2d::new(skip_channels, f_int, 1)?,
            bn_k: BatchNorm2d::new(f_int),
            conv_psi: Conv2d::new(f_int, 1, 1)?,
            bn_psi: BatchNorm2d::new(1),
            f_int,
        })
    }

    pub fn init<R: Rng>(&self, rng: &mut R) {
        init_he(&self.conv_q, rng);
        init_he(&self.conv_k, rng);
        init_he(&self.conv_psi, rng);
    }

    /// Gate the skip feature `f_s` with the signal `f_g`; both at the same
    /// batch and spatial dims. Returns `V (x) f_s` with `V` broadcast over
    /// the skip channels.
    pub fn forward(&self, f_g: &Tensor<T>, f_s: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (gs, ss) = (f_g.shape(), f_s.shape());
        if gs.len() != 4 || ss.len() != 4 || gs[0] != ss[0] || gs[2] != ss[2] || gs[3] != ss[3] {
            return Err(Error::Shape(format!(
                "attention gate inputs must share batch and spatial dims, got {:?} vs {:?}",
                gs, ss
            )));
        }
        let q = self.bn_q.forward(&self.conv_q.forward(f_g)?, mode)?.relu();
        let k = self.bn_k.forward(&self.conv_k.forward(f_s)?, mode)?.relu();
        let alpha = q.add(&k)?.relu();
        let v = self
            .bn_psi
            .forward(&self.conv_psi.forward(&alpha)?, mode)?
            .sigmoid();
        f_s.mul(&v)
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::grad_check;

    fn random_gate(cg: usize, cs: usize, rng: &mut ChaCha8Rng) -> AttentionGate<f64> {
        let gate = AttentionGate::new(cg, cs).unwrap();
        gate.init(rng);
        gate
    }

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
    }

    /// With psi weights zeroed, the composite bias of the psi path is its
    /// batchnorm beta, so V saturates to sigmoid(beta) in eval mode.
    #[test]
    fn saturated_gate_passes_skip_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gate = random_gate(4, 4, &mut rng);
        for v in gate.conv_psi.weight.data_mut().iter_mut() {
            *v = 0.0;
        }
        gate.bn_psi.beta.data_mut()[0] = 20.0;
        let f_g = random_tensor(&[1, 4, 6, 6], &mut rng);
        let f_s = random_tensor(&[1, 4, 6, 6], &mut rng);
        let out = gate.forward(&f_g, &f_s, Mode::Eval).unwrap();
        for (o, s) in out.to_vec().iter().zip(f_s.to_vec()) {
            assert!((o - s).abs() < 1e-6, "got {o}, skip {s}");
        }
    }

    #[test]
    fn saturated_gate_suppresses_skip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gate = random_gate(4, 4, &mut rng);
        for v in gate.conv_psi.weight.data_mut().iter_mut() {
            *v = 0.0;
        }
        gate.bn_psi.beta.data_mut()[0] = -20.0;
        let f_g = random_tensor(&[1, 4, 6, 6], &mut rng);
        let f_s = random_tensor(&[1, 4, 6, 6], &mut rng);
        let out = gate.forward(&f_g, &f_s, Mode::Eval).unwrap();
        for o in out.to_vec() {
            assert!(o.abs() < 1e-6, "got {o}");
        }
    }

    #[test]
    fn output_contracts_elementwise_over_random_trials() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let cg = rng.gen_range(1..4);
            let cs = rng.gen_range(1..4);
            let gate = random_gate(cg, cs, &mut rng);
            let f_g = random_tensor(&[1, cg, 4, 4], &mut rng);
            let f_s = random_tensor(&[1, cs, 4, 4], &mut rng);
            let out = gate.forward(&f_g, &f_s, Mode::Eval).unwrap();
            assert_eq!(out.shape(), f_s.shape());
            for (o, s) in out.to_vec().iter().zip(f_s.to_vec()) {
                assert!(o.abs() <= s.abs(), "|{o}| > |{s}|");
            }
        }
    }

    #[test]
    fn spatial_mismatch_is_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gate = random_gate(2, 2, &mut rng);
        let f_g = random_tensor(&[1, 2, 4, 4], &mut rng);
        let f_s = random_tensor(&[1, 2, 8, 8], &mut rng);
        assert!(gate.forward(&f_g, &f_s, Mode::Eval).is_err());
    }

    #[test]
    fn eval_attention_map_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gate = random_gate(3, 2, &mut rng);
        let f_g = random_tensor(&[2, 3, 4, 4], &mut rng);
        let f_s = random_tensor(&[2, 2, 4, 4], &mut rng);
        let a = gate.forward(&f_g, &f_s, Mode::Eval).unwrap();
        let b = gate.forward(&f_g, &f_s, Mode::Eval).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn grad_check_inputs_and_all_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let gate = random_gate(2, 2, &mut rng);
        let f_g = random_tensor(&[1, 2, 4, 4], &mut rng);
        let f_s = random_tensor(&[1, 2, 4, 4], &mut rng);
        // Conv biases are checked in eval mode only: under train-mode
        // batchnorm the batch mean absorbs them exactly, so their true
        // gradient is zero and the relative-error quotient is meaningless.
        let weights = [
            ("f_g", &f_g),
            ("f_s", &f_s),
            ("w_q", &gate.conv_q.weight),
            ("bn_q.gamma", &gate.bn_q.gamma),
            ("bn_q.beta", &gate.bn_q.beta),
            ("w_k", &gate.conv_k.weight),
            ("bn_k.gamma", &gate.bn_k.gamma),
            ("bn_k.beta", &gate.bn_k.beta),
            ("psi", &gate.conv_psi.weight),
            ("bn_psi.gamma", &gate.bn_psi.gamma),
            ("bn_psi.beta", &gate.bn_psi.beta),
        ];
        let biases = [
            ("b_q", &gate.conv_q.bias),
            ("b_k", &gate.conv_k.bias),
            ("b_psi", &gate.conv_psi.bias),
        ];
        for mode in [Mode::Train, Mode::Eval] {
            let loss = || {
                let y = gate.forward(&f_g, &f_s, mode)?;
                Ok(y.mul(&y)?.sum_all())
            };
            for (name, wrt) in weights {
                let err = grad_check(loss, wrt, 1e-5).unwrap();
                assert!(err < 1e-4, "{mode:?} {name} rel err {err}");
            }
            if mode == Mode::Eval {
                for (name, wrt) in biases {
                    let err = grad_check(loss, wrt, 1e-5).unwrap();
                    assert!(err < 1e-4, "{mode:?} {name} rel err {err}");
                }
            }
        }
    }
}
