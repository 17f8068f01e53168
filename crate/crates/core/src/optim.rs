//! Adam optimizer and the training-loop driver.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::TensorRecord;
use crate::data::{preprocess_train, stack_batch, Sample};
use crate::error::{Error, Result};
use crate::loss::{total_loss, LossWeights};
use crate::network::SalFAUNet;
use crate::nn::Mode;
use crate::scalar::Scalar;
use crate::tensor::{backward, Tensor};

/// Adam hyperparameters; the defaults are the standard ones.
#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

struct Slot<T: Scalar> {
    name: String,
    param: Tensor<T>,
    m: Vec<T>,
    v: Vec<T>,
}

/// Adam with bias correction over a fixed parameter list.
pub struct Adam<T: Scalar> {
    pub hyper: AdamHyper,
    step_count: u64,
    slots: Vec<Slot<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: Vec<(String, Tensor<T>)>, hyper: AdamHyper) -> Self {
        let slots = params
            .into_iter()
            .map(|(name, param)| {
                let n = param.numel();
                Slot {
                    name,
                    param,
                    m: vec![T::zero(); n],
                    v: vec![T::zero(); n],
                }
            })
            .collect();
        Adam {
            hyper,
            step_count: 0,
            slots,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update over all parameters. Every parameter must carry a
    /// gradient from the current backward pass.
    pub fn step(&mut self) -> Result<()> {
        for slot in &self.slots {
            if slot.param.grad().is_none() {
                return Err(Error::Contract(format!(
                    "missing gradient for parameter {}",
                    slot.name
                )));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let lr = T::from_f64(self.hyper.lr);
        let b1 = T::from_f64(self.hyper.beta1);
        let b2 = T::from_f64(self.hyper.beta2);
        let eps = T::from_f64(self.hyper.eps);
        let wd = T::from_f64(self.hyper.weight_decay);
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        for slot in &mut self.slots {
            let grad = slot.param.grad().expect("checked above");
            let mut data = slot.param.data_mut();
            for i in 0..data.len() {
                let g = grad[i] + wd * data[i];
                slot.m[i] = b1 * slot.m[i] + (T::one() - b1) * g;
                slot.v[i] = b2 * slot.v[i] + (T::one() - b2) * g * g;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

impl Adam<f32> {
    /// Optimizer state as checkpoint records: the step counter followed by
    /// the first/second moments of every parameter in order.
    pub fn to_records(&self) -> Vec<TensorRecord> {
        let mut out = vec![TensorRecord {
            name: "step".into(),
            dims: vec![1],
            data: vec![self.step_count as f32],
        }];
        for slot in &self.slots {
            let dims: Vec<u32> = slot.param.shape().iter().map(|&d| d as u32).collect();
            out.push(TensorRecord {
                name: format!("{}.m", slot.name),
                dims: dims.clone(),
                data: slot.m.clone(),
            });
            out.push(TensorRecord {
                name: format!("{}.v", slot.name),
                dims,
                data: slot.v.clone(),
            });
        }
        out
    }

    pub fn load_records(&mut self, records: &[TensorRecord]) -> Result<()> {
        let by_name: std::collections::HashMap<&str, &TensorRecord> =
            records.iter().map(|r| (r.name.as_str(), r)).collect();
        let step = by_name
            .get("step")
            .ok_or_else(|| Error::Checkpoint("missing tensor step".into()))?;
        self.step_count = step.data.first().copied().unwrap_or(0.0) as u64;
        for slot in &mut self.slots {
            for (suffix, target) in [("m", &mut slot.m), ("v", &mut slot.v)] {
                let name = format!("{}.{suffix}", slot.name);
                let record = by_name
                    .get(name.as_str())
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
                if record.data.len() != target.len() {
                    return Err(Error::Checkpoint(format!(
                        "tensor {name} has {} elements, expected {}",
                        record.data.len(),
                        target.len()
                    )));
                }
                target.copy_from_slice(&record.data);
            }
        }
        Ok(())
    }
}

/// Training-run settings at the loop level.
#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub iters: usize,
    pub batch: usize,
    pub seed: u64,
    pub weights: LossWeights,
    /// Emit a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: usize,
}

/// Seeded training loop: epoch-shuffled sampling with wrap-around,
/// per-sample augmentation, forward, deep-supervision loss, backward and
/// one Adam step per iteration. Returns the per-iteration loss history.
pub fn train_loop(
    net: &SalFAUNet<f32>,
    adam: &mut Adam<f32>,
    dataset: &[Sample],
    opts: &TrainOptions,
    mut on_checkpoint: impl FnMut(usize, &SalFAUNet<f32>, &Adam<f32>) -> Result<()>,
) -> Result<Vec<f32>> {
    if dataset.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    if opts.batch == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    opts.weights.validate()?;
    net.set_requires_grad(true);

    let size = net.cfg.input_size;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;

    let mut history = Vec::with_capacity(opts.iters);
    for iter in 0..opts.iters {
        net.zero_grad();
        let mut items = Vec::with_capacity(opts.batch);
        for _ in 0..opts.batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let sample = &dataset[order[cursor]];
            cursor += 1;
            items.push(preprocess_train(sample, size, &mut rng));
        }
        let (x, g) = stack_batch(&items);
        let outputs = net.forward(&x, Mode::Train)?;
        let loss = total_loss(&outputs, &g, &opts.weights)?;
        backward(&loss)?;
        adam.step()?;
        history.push(loss.item()?);
        if opts.checkpoint_every > 0 && (iter + 1) % opts.checkpoint_every == 0 {
            on_checkpoint(iter + 1, net, adam)?;
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint;
    use crate::network::NetworkConfig;

    fn scalar_param(name: &str, value: f64) -> (String, Tensor<f64>) {
        let p = Tensor::scalar(value);
        p.set_requires_grad(true);
        (name.into(), p)
    }

    #[test]
    fn first_step_matches_bias_corrected_closed_form() {
        let (name, p) = scalar_param("p", 3.0);
        let g = 2.0f64;
        p.accumulate_grad(&[g]);
        let hyper = AdamHyper::default();
        let mut adam = Adam::new(vec![(name, p.clone())], hyper);
        adam.step().unwrap();
        let delta = p.item().unwrap() - 3.0;
        let closed_form = -hyper.lr * g / (g.abs() + hyper.eps);
        assert!(
            (delta - closed_form).abs() < 1e-9,
            "delta {delta} vs closed form {closed_form}"
        );
        assert!((delta + 1e-3).abs() < 1e-8, "approximately -lr*sign(g)");
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let (name, p) = scalar_param("p", 1.5);
        p.accumulate_grad(&[0.0]);
        let mut adam = Adam::new(vec![(name, p.clone())], AdamHyper::default());
        adam.step().unwrap();
        assert_eq!(p.item().unwrap(), 1.5);
    }

    #[test]
    fn missing_gradient_names_the_parameter() {
        let (_, p) = scalar_param("enc0.conv1.weight", 1.0);
        let mut adam = Adam::new(
            vec![("enc0.conv1.weight".into(), p)],
            AdamHyper::default(),
        );
        let err = adam.step().unwrap_err();
        assert!(
            err.to_string()
                .contains("missing gradient for parameter enc0.conv1.weight"),
            "{err}"
        );
    }

    #[test]
    fn identical_groups_evolve_identically() {
        let (na, a) = scalar_param("a", 0.7);
        let (nb, b) = scalar_param("b", 0.7);
        let mut adam = Adam::new(vec![(na, a.clone()), (nb, b.clone())], AdamHyper::default());
        for _ in 0..5 {
            a.zero_grad();
            b.zero_grad();
            a.accumulate_grad(&[0.3]);
            b.accumulate_grad(&[0.3]);
            adam.step().unwrap();
            assert_eq!(a.item().unwrap(), b.item().unwrap());
        }
    }

    #[test]
    fn quadratic_bowl_step_moves_toward_zero_without_overshoot() {
        let (name, p) = scalar_param("p", 1.0);
        let mut adam = Adam::new(vec![(name, p.clone())], AdamHyper::default());
        let loss = p.mul(&p).unwrap().scale(0.5).sum_all();
        backward(&loss).unwrap();
        adam.step().unwrap();
        let v = p.item().unwrap();
        assert!(v < 1.0, "moved toward zero");
        assert!(v >= 1.0 - 2.0 * adam.hyper.lr, "no overshoot: {v}");
    }

    #[test]
    fn second_moment_stays_nonnegative() {
        let (name, p) = scalar_param("p", 0.2);
        let mut adam = Adam::new(vec![(name, p.clone())], AdamHyper::default());
        for i in 0..10 {
            p.zero_grad();
            p.accumulate_grad(&[if i % 2 == 0 { 1.0 } else { -2.5 }]);
            adam.step().unwrap();
        }
        assert!(adam.slots[0].v[0] >= 0.0);
    }

    #[test]
    fn optimizer_state_round_trip_is_step_equivalent() {
        let cfg = NetworkConfig::new(2, 16);
        let make_grads = |net: &SalFAUNet<f32>| {
            net.zero_grad();
            for (i, (_, p)) in net.trainable_params().iter().enumerate() {
                let g: Vec<f32> = (0..p.numel())
                    .map(|j| ((i * 31 + j * 7) % 13) as f32 / 13.0 - 0.4)
                    .collect();
                p.accumulate_grad(&g);
            }
        };

        let net_a = SalFAUNet::<f32>::new(cfg, 5).unwrap();
        let mut adam_a = Adam::new(net_a.trainable_params(), AdamHyper::default());
        for _ in 0..3 {
            make_grads(&net_a);
            adam_a.step().unwrap();
        }

        let bytes = checkpoint::encode(&net_a.to_records(), Some(&adam_a.to_records()));
        let (model, optim) = checkpoint::decode(&bytes).unwrap();
        let net_b = SalFAUNet::<f32>::new(cfg, 99).unwrap();
        net_b.load_records(&model).unwrap();
        let mut adam_b = Adam::new(net_b.trainable_params(), AdamHyper::default());
        adam_b.load_records(&optim.unwrap()).unwrap();
        assert_eq!(adam_b.step_count(), 3);

        make_grads(&net_a);
        adam_a.step().unwrap();
        make_grads(&net_b);
        adam_b.step().unwrap();
        for (a, b) in net_a.state().iter().zip(net_b.state().iter()) {
            assert_eq!(a.tensor.to_vec(), b.tensor.to_vec(), "{}", a.name);
        }
    }

    #[test]
    fn zero_iterations_change_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = crate::data::gen_synthetic(4, 16, 1, dir.path()).unwrap();
        let dataset = manifest.load_samples().unwrap();
        let net = SalFAUNet::<f32>::new(NetworkConfig::new(2, 16), 3).unwrap();
        let before = net.to_records();
        let mut adam = Adam::new(net.trainable_params(), AdamHyper::default());
        let opts = TrainOptions {
            iters: 0,
            batch: 2,
            seed: 0,
            weights: LossWeights::default(),
            checkpoint_every: 0,
        };
        let history = train_loop(&net, &mut adam, &dataset, &opts, |_, _, _| Ok(())).unwrap();
        assert!(history.is_empty());
        assert_eq!(net.to_records(), before);
    }

    #[test]
    fn same_seed_reproduces_loss_history() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = crate::data::gen_synthetic(6, 16, 2, dir.path()).unwrap();
        let dataset = manifest.load_samples().unwrap();
        let opts = TrainOptions {
            iters: 4,
            batch: 2,
            seed: 11,
            weights: LossWeights::default(),
            checkpoint_every: 0,
        };
        let run = || {
            let net = SalFAUNet::<f32>::new(NetworkConfig::new(2, 16), 3).unwrap();
            let mut adam = Adam::new(net.trainable_params(), AdamHyper::default());
            train_loop(&net, &mut adam, &dataset, &opts, |_, _, _| Ok(())).unwrap()
        };
        let h1 = run();
        let h2 = run();
        assert_eq!(h1, h2);
        assert!(h1.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn dataset_smaller_than_batch_wraps_around() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = crate::data::gen_synthetic(2, 16, 3, dir.path()).unwrap();
        let dataset = manifest.load_samples().unwrap();
        let net = SalFAUNet::<f32>::new(NetworkConfig::new(2, 16), 3).unwrap();
        let mut adam = Adam::new(net.trainable_params(), AdamHyper::default());
        let opts = TrainOptions {
            iters: 2,
            batch: 5,
            seed: 0,
            weights: LossWeights::default(),
            checkpoint_every: 0,
        };
        let history = train_loop(&net, &mut adam, &dataset, &opts, |_, _, _| Ok(())).unwrap();
        assert_eq!(history.len(), 2);
    }
}
