//! Pixel-summed binary cross-entropy and the deep-supervision total loss.

use crate::error::{Error, Result};
use crate::network::SaliencyOutputs;
use crate::scalar::Scalar;
use crate::tensor::{ops, Tensor};

/// Weights of the four side-map losses and the fused-map loss.
#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub w_side: [f64; 4],
    pub w_fuse: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_side: [1.0; 4],
            w_fuse: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.w_side.iter().chain([&self.w_fuse]).any(|&w| w < 0.0) {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Binary cross-entropy summed over every pixel and batch element, with the
/// prediction clamped to `[1e-7, 1 - 1e-7]` before the logs. Differentiable
/// with respect to the prediction; the target is treated as a constant.
pub fn bce_sum<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    ops::bce_sum_op(pred, target)
}

/// Weighted sum of the per-map pixel-summed BCE losses.
pub fn total_loss<T: Scalar>(
    outputs: &SaliencyOutputs<T>,
    target: &Tensor<T>,
    weights: &LossWeights,
) -> Result<Tensor<T>> {
    weights.validate()?;
    let mut acc = bce_sum(&outputs.side[0], target)?.scale(T::from_f64(weights.w_side[0]));
    for m in 1..4 {
        let term = bce_sum(&outputs.side[m], target)?.scale(T::from_f64(weights.w_side[m]));
        acc = acc.add(&term)?;
    }
    let fuse = bce_sum(&outputs.fused, target)?.scale(T::from_f64(weights.w_fuse));
    acc.add(&fuse)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::{backward, grad_check};

    fn outputs_from(maps: [Tensor<f64>; 5]) -> SaliencyOutputs<f64> {
        let [a, b, c, d, fused] = maps;
        SaliencyOutputs {
            side: vec![a, b, c, d],
            fused,
        }
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let g = Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0f64, 0.0, 1.0, 0.0]).unwrap();
        let loss = bce_sum(&g, &g).unwrap().item().unwrap();
        assert!(loss < 1e-5 * 4.0, "loss {loss}");
    }

    #[test]
    fn half_probability_gives_pixelcount_ln2() {
        let p = Tensor::full([1, 1, 4, 4], 0.5f64);
        let g = Tensor::from_fn([1, 1, 4, 4], |i| if i % 3 == 0 { 1.0 } else { 0.0 });
        let loss = bce_sum(&p, &g).unwrap().item().unwrap();
        let expect = 16.0 * std::f64::consts::LN_2;
        assert!((loss - expect).abs() < 1e-4, "loss {loss} vs {expect}");
    }

    #[test]
    fn reciprocal_e_single_pixel() {
        let p = Tensor::full([1, 1, 1, 1], (-1.0f64).exp());
        let g = Tensor::full([1, 1, 1, 1], 1.0f64);
        let loss = bce_sum(&p, &g).unwrap().item().unwrap();
        assert!((loss - 1.0).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn shape_mismatch_is_error() {
        let p = Tensor::<f64>::full([1, 1, 2, 2], 0.5);
        let g = Tensor::<f64>::zeros([1, 1, 4, 4]);
        assert!(bce_sum(&p, &g).is_err());
    }

    #[test]
    fn loss_is_nonnegative_with_signed_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Tensor::<f64>::from_fn([1, 1, 4, 4], |_| rng.gen_range(0.05..0.95));
        let g = Tensor::<f64>::from_fn([1, 1, 4, 4], |_| f64::from(rng.gen_bool(0.5)));
        p.set_requires_grad(true);
        let loss = bce_sum(&p, &g).unwrap();
        assert!(loss.item().unwrap() >= 0.0);
        backward(&loss).unwrap();
        let grad = p.grad().unwrap();
        for ((gv, pv), tv) in grad.iter().zip(p.to_vec()).zip(g.to_vec()) {
            if tv == 1.0 {
                assert!(*gv < 0.0, "loss must decrease in P at G=1 (P={pv})");
            } else {
                assert!(*gv > 0.0, "loss must increase in P at G=0 (P={pv})");
            }
        }
    }

    #[test]
    fn bce_grad_check_away_from_clamp() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = Tensor::<f64>::from_fn([1, 1, 4, 4], |_| rng.gen_range(0.1..0.9));
        let g = Tensor::<f64>::from_fn([1, 1, 4, 4], |_| f64::from(rng.gen_bool(0.5)));
        let err = grad_check(|| bce_sum(&p, &g), &p, 1e-5).unwrap();
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn five_identical_maps_give_five_times_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Tensor::<f64>::from_fn([1, 1, 4, 4], |_| rng.gen_range(0.05..0.95));
        let g = Tensor::<f64>::from_fn([1, 1, 4, 4], |_| f64::from(rng.gen_bool(0.5)));
        let outputs = outputs_from([m.clone(), m.clone(), m.clone(), m.clone(), m.clone()]);
        let total = total_loss(&outputs, &g, &LossWeights::default())
            .unwrap()
            .item()
            .unwrap();
        let single = bce_sum(&m, &g).unwrap().item().unwrap();
        assert_eq!(total, 5.0 * single);
    }

    #[test]
    fn zero_weights_give_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = Tensor::<f64>::from_fn([1, 1, 2, 2], |_| rng.gen_range(0.2..0.8));
        let g = Tensor::<f64>::zeros([1, 1, 2, 2]);
        let outputs = outputs_from([m.clone(), m.clone(), m.clone(), m.clone(), m]);
        let w = LossWeights {
            w_side: [0.0; 4],
            w_fuse: 0.0,
        };
        assert_eq!(total_loss(&outputs, &g, &w).unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn selector_weights_pick_one_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let maps: Vec<Tensor<f64>> = (0..5)
            .map(|_| Tensor::from_fn([1, 1, 2, 2], |_| rng.gen_range(0.2..0.8)))
            .collect();
        let g = Tensor::<f64>::from_fn([1, 1, 2, 2], |_| f64::from(rng.gen_bool(0.5)));
        let outputs = outputs_from([
            maps[0].clone(),
            maps[1].clone(),
            maps[2].clone(),
            maps[3].clone(),
            maps[4].clone(),
        ]);
        let w = LossWeights {
            w_side: [1.0, 0.0, 0.0, 0.0],
            w_fuse: 0.0,
        };
        let total = total_loss(&outputs, &g, &w).unwrap().item().unwrap();
        let single = bce_sum(&maps[0], &g).unwrap().item().unwrap();
        assert_eq!(total, single);
    }

    #[test]
    fn total_loss_is_linear_in_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let maps: Vec<Tensor<f64>> = (0..5)
            .map(|_| Tensor::from_fn([1, 1, 3, 3], |_| rng.gen_range(0.1..0.9)))
            .collect();
        let g = Tensor::<f64>::from_fn([1, 1, 3, 3], |_| f64::from(rng.gen_bool(0.5)));
        let outputs = outputs_from([
            maps[0].clone(),
            maps[1].clone(),
            maps[2].clone(),
            maps[3].clone(),
            maps[4].clone(),
        ]);
        let w1 = LossWeights {
            w_side: [0.3, 1.2, 0.7, 2.0],
            w_fuse: 0.5,
        };
        let w2 = LossWeights {
            w_side: [0.6, 2.4, 1.4, 4.0],
            w_fuse: 1.0,
        };
        let l1 = total_loss(&outputs, &g, &w1).unwrap().item().unwrap();
        let l2 = total_loss(&outputs, &g, &w2).unwrap().item().unwrap();
        assert!((l2 - 2.0 * l1).abs() / l1.abs() < 1e-6, "{l2} vs 2*{l1}");
    }
}
