use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::DEFAULT_SIZE;
use crate::error::{Error, Result};
use crate::model::{InitScheme, DEFAULT_CHANNELS};
use crate::objectives::{GradTarget, LossConfig, LossWeights, DEFAULT_ENTROPY_BINS};

/// Run hyperparameters. The TOML config file uses these field names; every
/// key is optional and falls back to the default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Only 1 is supported: one optimiser step per image.
    pub batch: usize,
    pub epochs: u64,
    pub channels: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub grad_target: GradTarget,
    pub entropy_bins: usize,
    /// Save a checkpoint every this many steps; 0 saves only the final one.
    pub checkpoint_every: u64,
    /// Stop after this many global steps even if epochs remain.
    pub max_steps: Option<u64>,
    pub init: InitScheme,
    /// Rescale the full gradient to at most this L2 norm. Off by default.
    pub clip_grad_norm: Option<f64>,
    /// Where checkpoints and the loss log go. Not part of the checkpoint
    /// snapshot, so identical runs in different directories match.
    #[serde(skip_serializing)]
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        TrainConfig {
            lr: 1e-4,
            batch: 1,
            epochs: 10,
            channels: DEFAULT_CHANNELS,
            lambda1: w.lambda1,
            lambda2: w.lambda2,
            lambda3: w.lambda3,
            seed: 0,
            height: DEFAULT_SIZE.0,
            width: DEFAULT_SIZE.1,
            grad_target: GradTarget::Max,
            entropy_bins: DEFAULT_ENTROPY_BINS,
            checkpoint_every: 0,
            max_steps: None,
            init: InitScheme::HeXavier,
            clip_grad_norm: None,
            out_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Canonical text form: fixed key order, `out_dir` omitted.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            weights: self.weights(),
            entropy_bins: self.entropy_bins,
            grad_target: self.grad_target,
        }
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch != 1 {
            return bad(format!("batch must be 1, got {}", self.batch));
        }
        if self.channels < 2 || !self.channels.is_multiple_of(2) {
            return bad(format!("channels must be even and at least 2, got {}", self.channels));
        }
        for (name, l) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(l >= 0.0 && l.is_finite()) {
                return bad(format!("{name} must be non-negative, got {l}"));
            }
        }
        if self.height == 0 || self.width == 0 {
            return bad(format!("image size must be positive, got {}x{}", self.height, self.width));
        }
        if self.entropy_bins < 2 {
            return bad(format!("entropy_bins must be at least 2, got {}", self.entropy_bins));
        }
        if let Some(c) = self.clip_grad_norm {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("clip_grad_norm must be positive, got {c}"));
            }
        }
        Ok(())
    }
}
