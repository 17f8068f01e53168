//! The full saliency network: five encoder blocks, four attention-gated
//! decoder blocks, and the saliency fusion head producing four side maps
//! plus the fused map.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::AttentionGate;
use crate::error::{Error, Result};
use crate::nn::{init_he, maxpool2d, upsample_bilinear, Conv2d, ConvBnRelu, Mode};
use crate::scalar::Scalar;
use crate::tensor::{concat_channels, Tensor};

/// Architecture hyperparameters. The channel plan at encoder level `i` is
/// `base_channels * 2^i`; five levels halve the spatial size four times,
/// so the input size must be divisible by 16.
#[derive(Clone, Copy, Debug)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub input_size: usize,
}

impl NetworkConfig {
    pub fn new(base_channels: usize, input_size: usize) -> Self {
        NetworkConfig {
            in_channels: 3,
            base_channels,
            depth: 5,
            input_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth != 5 {
            return Err(Error::Config(format!(
                "architecture is fixed at 5 encoder levels, got {}",
                self.depth
            )));
        }
        if self.base_channels == 0 || self.in_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.input_size == 0 || self.input_size % 16 != 0 {
            return Err(Error::Config(format!(
                "input_size must be a positive multiple of 16, got {}",
                self.input_size
            )));
        }
        Ok(())
    }

    /// Encoder output channels at level `i` (0-based).
    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

/// Two conv-bn-relu layers.
pub struct EncoderBlock<T: Scalar> {
    pub cbr1: ConvBnRelu<T>,
    pub cbr2: ConvBnRelu<T>,
}

impl<T: Scalar> EncoderBlock<T> {
    fn new(in_channels: usize, out_channels: usize) -> Result<Self> {
        Ok(EncoderBlock {
            cbr1: ConvBnRelu::new(in_channels, out_channels, 3)?,
            cbr2: ConvBnRelu::new(out_channels, out_channels, 3)?,
        })
    }

    fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.cbr2.forward(&self.cbr1.forward(x, mode)?, mode)
    }
}

/// Upsample, attention-gate the skip, concatenate, then two conv-bn-relu
/// layers that halve the channel count relative to the deeper feature.
pub struct DecoderBlock<T: Scalar> {
    pub ag: AttentionGate<T>,
    pub cbr1: ConvBnRelu<T>,
    pub cbr2: ConvBnRelu<T>,
}

impl<T: Scalar> DecoderBlock<T> {
    fn new(deep_channels: usize, skip_channels: usize) -> Result<Self> {
        Ok(DecoderBlock {
            ag: AttentionGate::new(deep_channels, skip_channels)?,
            cbr1: ConvBnRelu::new(deep_channels + skip_channels, skip_channels, 3)?,
            cbr2: ConvBnRelu::new(skip_channels, skip_channels, 3)?,
        })
    }

    fn forward(&self, deep: &Tensor<T>, skip: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let up = upsample_bilinear(deep, skip.shape()[2], skip.shape()[3])?;
        let gated = self.ag.forward(&up, skip, mode)?;
        let cat = concat_channels(&[up, gated])?;
        self.cbr2.forward(&self.cbr1.forward(&cat, mode)?, mode)
    }
}

/// The four side maps plus the fused map, all at input resolution with
/// sigmoid-range values.
pub struct SaliencyOutputs<T: Scalar> {
    pub side: Vec<Tensor<T>>,
    pub fused: Tensor<T>,
}

/// One row of the symbolic shape plan.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageShape {
    pub stage: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl std::fmt::Display for StageShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {}\u{d7}{}\u{d7}{}",
            self.stage, self.channels, self.height, self.width
        )
    }
}

/// Named parameter or state tensor of the network.
pub struct StateEntry<T: Scalar> {
    pub name: String,
    pub tensor: Tensor<T>,
    /// Gradient-bearing parameter (weights, biases, batchnorm affine) as
    /// opposed to running statistics.
    pub trainable: bool,
}

pub struct SalFAUNet<T: Scalar> {
    pub cfg: NetworkConfig,
    pub encoders: Vec<EncoderBlock<T>>,
    pub decoders: Vec<DecoderBlock<T>>,
    pub side_convs: Vec<Conv2d<T>>,
    pub fuse_conv: Conv2d<T>,
}

impl<T: Scalar> SalFAUNet<T> {
    /// Build and He-initialize all layers deterministically from `seed`.
    pub fn new(cfg: NetworkConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut encoders = Vec::with_capacity(5);
        for i in 0..cfg.depth {
            let cin = if i == 0 {
                cfg.in_channels
            } else {
                cfg.channels_at(i - 1)
            };
            encoders.push(EncoderBlock::new(cin, cfg.channels_at(i))?);
        }

        let mut decoders = Vec::with_capacity(4);
        let mut side_convs = Vec::with_capacity(4);
        for m in 1..=4 {
            let deep = cfg.channels_at(5 - m);
            let skip = cfg.channels_at(4 - m);
            decoders.push(DecoderBlock::new(deep, skip)?);
            side_convs.push(Conv2d::new(skip, 1, 3)?);
        }
        let fuse_conv = Conv2d::new(4, 1, 1)?;

        let net = SalFAUNet {
            cfg,
            encoders,
            decoders,
            side_convs,
            fuse_conv,
        };
        for enc in &net.encoders {
            init_he(&enc.cbr1.conv, &mut rng);
            init_he(&enc.cbr2.conv, &mut rng);
        }
        for dec in &net.decoders {
            dec.ag.init(&mut rng);
            init_he(&dec.cbr1.conv, &mut rng);
            init_he(&dec.cbr2.conv, &mut rng);
        }
        for side in &net.side_convs {
            init_he(side, &mut rng);
        }
        init_he(&net.fuse_conv, &mut rng);
        Ok(net)
    }

    /// Run the network. Train mode requires the configured input size;
    /// eval mode accepts any square input divisible by 16 and is pure.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<SaliencyOutputs<T>> {
        Ok(self.forward_traced(x, mode)?.0)
    }

    /// Forward pass that also reports the shape of every stage, for
    /// comparison against [`shape_plan`].
    pub fn forward_traced(
        &self,
        x: &Tensor<T>,
        mode: Mode,
    ) -> Result<(SaliencyOutputs<T>, Vec<StageShape>)> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.cfg.in_channels {
            return Err(Error::Shape(format!(
                "expected input [N,{},S,S], got {:?}",
                self.cfg.in_channels, s
            )));
        }
        if s[2] != s[3] {
            return Err(Error::Shape(format!(
                "expected square input, got {}x{}",
                s[2], s[3]
            )));
        }
        let size = s[2];
        match mode {
            Mode::Train if size != self.cfg.input_size => {
                return Err(Error::Shape(format!(
                    "train mode requires input size {}, got {}",
                    self.cfg.input_size, size
                )));
            }
            _ if size % 16 != 0 => {
                return Err(Error::Shape(format!(
                    "input size must be divisible by 16, got {size}"
                )));
            }
            _ => {}
        }

        let mut trace = vec![stage("input", x)];
        let mut feats = Vec::with_capacity(5);
        let mut cur = x.clone();
        for (i, enc) in self.encoders.iter().enumerate() {
            if i > 0 {
                cur = maxpool2d(&cur)?;
            }
            cur = enc.forward(&cur, mode)?;
            trace.push(stage(&format!("enc{i}"), &cur));
            feats.push(cur.clone());
        }

        let mut deep = feats[4].clone();
        let mut side_logits = Vec::with_capacity(4);
        for (m, dec) in self.decoders.iter().enumerate() {
            let skip = &feats[3 - m];
            deep = dec.forward(&deep, skip, mode)?;
            trace.push(stage(&format!("dec{}", m + 1), &deep));
            let logit = self.side_convs[m].forward(&deep)?;
            // Fusion concatenates the upsampled pre-sigmoid logits.
            let up_logit = upsample_bilinear(&logit, size, size)?;
            side_logits.push(up_logit);
        }

        let side: Vec<Tensor<T>> = side_logits.iter().map(|l| l.sigmoid()).collect();
        for (m, sm) in side.iter().enumerate() {
            trace.push(stage(&format!("side{}", m + 1), sm));
        }
        let fused = self.fuse_conv.forward(&concat_channels(&side_logits)?)?.sigmoid();
        trace.push(stage("fuse", &fused));

        Ok((SaliencyOutputs { side, fused }, trace))
    }

    /// All named state tensors in a fixed order (parameters first within
    /// each layer, then batchnorm running statistics).
    pub fn state(&self) -> Vec<StateEntry<T>> {
        let mut out = Vec::new();
        for (i, enc) in self.encoders.iter().enumerate() {
            push_cbr(&mut out, &format!("enc{i}"), 1, &enc.cbr1);
            push_cbr(&mut out, &format!("enc{i}"), 2, &enc.cbr2);
        }
        for (m, dec) in self.decoders.iter().enumerate() {
            let p = format!("dec{}", m + 1);
            push_conv(&mut out, &format!("{p}.ag.conv_q"), &dec.ag.conv_q);
            push_bn(&mut out, &format!("{p}.ag.bn_q"), &dec.ag.bn_q);
            push_conv(&mut out, &format!("{p}.ag.conv_k"), &dec.ag.conv_k);
            push_bn(&mut out, &format!("{p}.ag.bn_k"), &dec.ag.bn_k);
            push_conv(&mut out, &format!("{p}.ag.conv_psi"), &dec.ag.conv_psi);
            push_bn(&mut out, &format!("{p}.ag.bn_psi"), &dec.ag.bn_psi);
            push_cbr(&mut out, &p, 1, &dec.cbr1);
            push_cbr(&mut out, &p, 2, &dec.cbr2);
        }
        for (m, side) in self.side_convs.iter().enumerate() {
            push_conv(&mut out, &format!("side{}", m + 1), side);
        }
        push_conv(&mut out, "fuse", &self.fuse_conv);
        out
    }

    pub fn trainable_params(&self) -> Vec<(String, Tensor<T>)> {
        self.state()
            .into_iter()
            .filter(|e| e.trainable)
            .map(|e| (e.name, e.tensor))
            .collect()
    }

    pub fn set_requires_grad(&self, flag: bool) {
        for (_, p) in self.trainable_params() {
            p.set_requires_grad(flag);
        }
    }

    pub fn zero_grad(&self) {
        for (_, p) in self.trainable_params() {
            p.zero_grad();
        }
    }
}

fn stage<T: Scalar>(name: &str, t: &Tensor<T>) -> StageShape {
    let s = t.shape();
    StageShape {
        stage: name.to_string(),
        channels: s[1],
        height: s[2],
        width: s[3],
    }
}

fn push_conv<T: Scalar>(out: &mut Vec<StateEntry<T>>, prefix: &str, conv: &Conv2d<T>) {
    out.push(StateEntry {
        name: format!("{prefix}.weight"),
        tensor: conv.weight.clone(),
        trainable: true,
    });
    out.push(StateEntry {
        name: format!("{prefix}.bias"),
        tensor: conv.bias.clone(),
        trainable: true,
    });
}

fn push_bn<T: Scalar>(out: &mut Vec<StateEntry<T>>, prefix: &str, bn: &crate::nn::BatchNorm2d<T>) {
    out.push(StateEntry {
        name: format!("{prefix}.gamma"),
        tensor: bn.gamma.clone(),
        trainable: true,
    });
    out.push(StateEntry {
        name: format!("{prefix}.beta"),
        tensor: bn.beta.clone(),
        trainable: true,
    });
    out.push(StateEntry {
        name: format!("{prefix}.running_mean"),
        tensor: bn.running_mean.clone(),
        trainable: false,
    });
    out.push(StateEntry {
        name: format!("{prefix}.running_var"),
        tensor: bn.running_var.clone(),
        trainable: false,
    });
}

fn push_cbr<T: Scalar>(out: &mut Vec<StateEntry<T>>, prefix: &str, idx: usize, cbr: &ConvBnRelu<T>) {
    push_conv(out, &format!("{prefix}.conv{idx}"), &cbr.conv);
    push_bn(out, &format!("{prefix}.bn{idx}"), &cbr.bn);
}

/// Symbolic per-stage shape table, matching `forward_traced` without
/// allocating any tensors.
pub fn shape_plan(cfg: &NetworkConfig) -> Result<Vec<StageShape>> {
    cfg.validate()?;
    let s = cfg.input_size;
    let mut plan = vec![StageShape {
        stage: "input".into(),
        channels: cfg.in_channels,
        height: s,
        width: s,
    }];
    for i in 0..cfg.depth {
        let size = s >> i;
        plan.push(StageShape {
            stage: format!("enc{i}"),
            channels: cfg.channels_at(i),
            height: size,
            width: size,
        });
    }
    for m in 1..=4usize {
        let size = s >> (4 - m);
        plan.push(StageShape {
            stage: format!("dec{m}"),
            channels: cfg.channels_at(4 - m),
            height: size,
            width: size,
        });
    }
    for m in 1..=4usize {
        plan.push(StageShape {
            stage: format!("side{m}"),
            channels: 1,
            height: s,
            width: s,
        });
    }
    plan.push(StageShape {
        stage: "fuse".into(),
        channels: 1,
        height: s,
        width: s,
    });
    Ok(plan)
}
