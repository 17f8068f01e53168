//! Flat key=value configuration with documented defaults.
//!
//! Precedence: command-line flags override config-file values, which
//! override the defaults below.

use std::path::Path;

use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::metrics::{EmThresholdMode, MetricConfig};
use crate::network::NetworkConfig;
use crate::optim::AdamHyper;

#[derive(Clone, Copy, Debug)]
pub struct Config {
    pub base_channels: usize,
    pub input_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub iters: usize,
    pub seed: u64,
    pub w_side: [f64; 4],
    pub w_fuse: f64,
    pub checkpoint_every: usize,
    pub em_threshold_mode: EmThresholdMode,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            base_channels: 64,
            input_size: 288,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            batch: 12,
            iters: 500_000,
            seed: 0,
            w_side: [1.0; 4],
            w_fuse: 1.0,
            checkpoint_every: 0,
            em_threshold_mode: EmThresholdMode::Adaptive,
        }
    }
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Config::default();
        cfg.apply_file(path)?;
        Ok(cfg)
    }

    /// Apply `key = value` lines; `#` starts a comment, blank lines are
    /// skipped, unknown keys are rejected.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {} is not `key = value`: {raw:?}",
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                Error::Config(format!("invalid value {value:?} for key {key}"))
            })
        }
        match key {
            "base_channels" => self.base_channels = num(key, value)?,
            "input_size" => self.input_size = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "eps" => self.eps = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "iters" => self.iters = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "w_side1" => self.w_side[0] = num(key, value)?,
            "w_side2" => self.w_side[1] = num(key, value)?,
            "w_side3" => self.w_side[2] = num(key, value)?,
            "w_side4" => self.w_side[3] = num(key, value)?,
            "w_fuse" => self.w_fuse = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "em_threshold_mode" => {
                self.em_threshold_mode = match value {
                    "adaptive" => EmThresholdMode::Adaptive,
                    "max" => EmThresholdMode::MaxSweep,
                    other => {
                        return Err(Error::Config(format!(
                            "em_threshold_mode must be `adaptive` or `max`, got {other:?}"
                        )))
                    }
                }
            }
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig::new(self.base_channels, self.input_size)
    }

    pub fn hyper(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            w_side: self.w_side,
            w_fuse: self.w_fuse,
        }
    }

    pub fn metrics(&self) -> MetricConfig {
        MetricConfig {
            em_mode: self.em_threshold_mode,
            ..Default::default()
        }
    }
}
