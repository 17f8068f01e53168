use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::shape;
use super::*;

fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
}

#[test]
fn create_zero_fill() {
    let t = Tensor::<f32>::zeros([2, 2]);
    assert_eq!(t.shape(), &[2, 2]);
    assert_eq!(t.to_vec(), vec![0.0; 4]);
    assert!(!t.requires_grad());
}

#[test]
fn create_from_contents() {
    let t = Tensor::from_vec(vec![3], vec![1.0f32, 2.0, 3.0]).unwrap();
    assert_eq!(t.to_vec(), vec![1.0, 2.0, 3.0]);
}

#[test]
fn create_length_mismatch_message() {
    let err = Tensor::from_vec(vec![2], vec![1.0f32, 2.0, 3.0]).unwrap_err();
    assert!(err.to_string().contains("expected 2 elements, got 3"), "{err}");
}

#[test]
fn add_forced_arithmetic() {
    let a = t64(&[2], &[1.0, 2.0]);
    let b = t64(&[2], &[3.0, 4.0]);
    assert_eq!(a.add(&b).unwrap().to_vec(), vec![4.0, 6.0]);
}

#[test]
fn mul_by_zero_annihilates_value_and_grad() {
    let x = t64(&[3], &[1.5, -2.0, 7.0]);
    x.set_requires_grad(true);
    let z = Tensor::<f64>::zeros([3]);
    let y = x.mul(&z).unwrap();
    assert_eq!(y.to_vec(), vec![0.0; 3]);
    backward(&y.sum_all()).unwrap();
    assert_eq!(x.grad().unwrap(), vec![0.0; 3]);
}

#[test]
fn sub_self_is_zero() {
    let x = t64(&[4], &[0.25, -3.0, 19.5, 1e-9]);
    assert_eq!(x.sub(&x).unwrap().to_vec(), vec![0.0; 4]);
}

#[test]
fn ewise_shape_error_lists_both_shapes() {
    let a = Tensor::<f32>::zeros([2, 3]);
    let b = Tensor::<f32>::zeros([4]);
    let err = a.add(&b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4]"), "{msg}");
}

#[test]
fn ewise_channel_vector_broadcast() {
    // [1,2,2,2] + [2] adds one value per channel.
    let a = t64(&[1, 2, 2, 2], &[0.0; 8]);
    let b = t64(&[2], &[1.0, 2.0]);
    let y = a.add(&b).unwrap();
    assert_eq!(y.to_vec(), vec![1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
}

#[test]
fn ewise_channel_map_broadcast_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = Tensor::<f64>::from_fn([2, 3, 2, 2], |_| rng.gen_range(-1.0..1.0));
    let b = Tensor::<f64>::from_fn([2, 1, 2, 2], |_| rng.gen_range(-1.0..1.0));
    a.set_requires_grad(true);
    let err = grad_check(|| Ok(a.mul(&b)?.sum_all()), &a, 1e-5).unwrap();
    assert!(err < 1e-6, "rel err {err}");
    let err = grad_check(|| Ok(a.mul(&b)?.sum_all()), &b, 1e-5).unwrap();
    assert!(err < 1e-6, "rel err {err}");
}

#[test]
fn sigmoid_symmetry_point() {
    let y = t64(&[1], &[0.0]).sigmoid();
    assert_eq!(y.to_vec(), vec![0.5]);
}

#[test]
fn relu_definition_cases() {
    let y = t64(&[2], &[-3.0, 3.0]).relu();
    assert_eq!(y.to_vec(), vec![0.0, 3.0]);
}

#[test]
fn sigmoid_derivative_at_zero() {
    let x = t64(&[1], &[0.0]);
    x.set_requires_grad(true);
    backward(&x.sigmoid().sum_all()).unwrap();
    let g = x.grad().unwrap()[0];
    assert!((g - 0.25).abs() < 1e-12, "analytic {g}");
    let err = grad_check(|| Ok(x.sigmoid().sum_all()), &x, 1e-5).unwrap();
    assert!(err < 1e-6, "rel err {err}");
}

#[test]
fn concat_shape_arithmetic_and_identity() {
    let a = Tensor::<f32>::full([1, 1, 4, 4], 1.0);
    let b = Tensor::<f32>::full([1, 1, 4, 4], 2.0);
    let y = concat_channels(&[a.clone(), b]).unwrap();
    assert_eq!(y.shape(), &[1, 2, 4, 4]);

    let single = concat_channels(&[a.clone()]).unwrap();
    assert_eq!(single.to_vec(), a.to_vec());
}

#[test]
fn concat_then_slice_round_trips_bit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = Tensor::<f32>::from_fn([2, 3, 2, 2], |_| rng.gen_range(-5.0f32..5.0));
    let b = Tensor::<f32>::from_fn([2, 2, 2, 2], |_| rng.gen_range(-5.0f32..5.0));
    let y = concat_channels(&[a.clone(), b.clone()]).unwrap();
    assert_eq!(y.narrow_channels(0, 3).unwrap().to_vec(), a.to_vec());
    assert_eq!(y.narrow_channels(3, 2).unwrap().to_vec(), b.to_vec());
}

#[test]
fn concat_spatial_mismatch_is_error() {
    let a = Tensor::<f32>::zeros([1, 1, 4, 4]);
    let b = Tensor::<f32>::zeros([1, 1, 2, 4]);
    assert!(concat_channels(&[a, b]).is_err());
}

#[test]
fn backward_sum_gives_ones() {
    let x = Tensor::<f64>::from_fn([2, 3], |i| i as f64);
    x.set_requires_grad(true);
    backward(&x.sum_all()).unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
}

#[test]
fn backward_sum_of_squares() {
    let x = t64(&[2], &[1.0, 2.0]);
    x.set_requires_grad(true);
    backward(&x.mul(&x).unwrap().sum_all()).unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let x = Tensor::<f64>::zeros([2]);
    x.set_requires_grad(true);
    let y = x.relu();
    let err = backward(&y).unwrap_err();
    assert!(err.to_string().contains("scalar"), "{err}");
}

#[test]
fn composite_graph_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = Tensor::<f64>::from_fn([2, 2, 4, 4], |_| rng.gen_range(-1.0..1.0));
    let w = Tensor::<f64>::from_fn([2, 2, 4, 4], |_| rng.gen_range(-1.0..1.0));
    x.set_requires_grad(true);
    let build = || {
        let h = x.mul(&w)?.relu().add(&x)?.sigmoid();
        Ok(h.mul(&h)?.sum_all())
    };
    let err = grad_check(build, &x, 1e-5).unwrap();
    assert!(err < 1e-4, "rel err {err}");
}

#[test]
fn grad_accumulates_across_uses() {
    // Using x twice in one graph equals the sum of the single-use gradients.
    let x = t64(&[2], &[0.5, -1.25]);
    let a = t64(&[2], &[2.0, 3.0]);
    let b = t64(&[2], &[-1.0, 4.0]);

    x.set_requires_grad(true);
    let both = x.mul(&a).unwrap().add(&x.mul(&b).unwrap()).unwrap();
    backward(&both.sum_all()).unwrap();
    let combined = x.grad().unwrap();

    x.zero_grad();
    backward(&x.mul(&a).unwrap().sum_all()).unwrap();
    let first = x.grad().unwrap();
    x.zero_grad();
    backward(&x.mul(&b).unwrap().sum_all()).unwrap();
    let second = x.grad().unwrap();

    for i in 0..2 {
        assert_eq!(combined[i], first[i] + second[i]);
    }
}

#[test]
fn grad_accumulates_across_backward_calls() {
    let x = t64(&[2], &[1.0, 2.0]);
    x.set_requires_grad(true);
    let loss = x.sum_all();
    backward(&loss).unwrap();
    backward(&loss).unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
}

#[test]
fn grad_check_refuses_single_precision() {
    let x = Tensor::<f32>::zeros([2]);
    let err = grad_check(|| Ok(x.sigmoid().sum_all()), &x, 1e-5).unwrap_err();
    assert!(err.to_string().contains("double precision"), "{err}");
}

#[test]
fn grad_check_validates_eps_range() {
    let x = Tensor::<f64>::zeros([2]);
    assert!(grad_check(|| Ok(x.sum_all()), &x, 1e-2).is_err());
    assert!(grad_check(|| Ok(x.sum_all()), &x, 1e-8).is_err());
}

#[test]
fn shape_evaluator_agrees_with_execution() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..100 {
        let n = rng.gen_range(1..3usize);
        let c = rng.gen_range(1..4usize);
        let h = rng.gen_range(1..5usize) * 2;
        let w = rng.gen_range(1..5usize) * 2;
        let x = Tensor::<f32>::from_fn([n, c, h, w], |_| rng.gen_range(-1.0f32..1.0));

        match rng.gen_range(0..5) {
            0 => {
                let b = Tensor::<f32>::from_fn([c], |_| rng.gen());
                let y = x.add(&b).unwrap();
                assert_eq!(y.shape(), shape::ewise_shape(x.shape(), b.shape()).unwrap());
            }
            1 => {
                let y = x.relu();
                assert_eq!(y.shape(), shape::unary_shape(x.shape()));
            }
            2 => {
                let y = concat_channels(&[x.clone(), x.clone()]).unwrap();
                let shapes = [x.shape(), x.shape()];
                assert_eq!(y.shape(), shape::concat_channels_shape(&shapes).unwrap());
            }
            3 => {
                let y = x.sum_all();
                assert_eq!(y.shape(), shape::sum_shape(x.shape()));
            }
            _ => {
                let oh = rng.gen_range(1..9usize);
                let ow = rng.gen_range(1..9usize);
                let y = crate::nn::upsample_bilinear(&x, oh, ow).unwrap();
                assert_eq!(y.shape(), shape::upsample_shape(x.shape(), oh, ow).unwrap());
            }
        }
    }
}

#[test]
fn forward_outputs_are_nan_free() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x = Tensor::<f32>::from_fn([1, 2, 4, 4], |_| rng.gen_range(-50.0f32..50.0));
    let y = x.sigmoid().mul(&x.relu()).unwrap().sub(&x).unwrap();
    assert!(y.to_vec().iter().all(|v| !v.is_nan()));
}
