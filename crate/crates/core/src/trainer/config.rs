use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainError;
use crate::data::{SplitSpec, INPUT_SIZE};
use crate::loss::{LossConfig, LossKind, DEFAULT_ALPHA, DEFAULT_VARIANCE_EPSILON};

/// Every training knob. Serialized as a flat TOML table whose keys are the
/// field names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    /// Backbone learning rate = `base_lr * backbone_lr_multiplier`.
    pub backbone_lr_multiplier: f64,
    /// Adam L2 penalty, constant across epochs.
    pub weight_decay: f64,
    pub lr_step_epochs: usize,
    pub lr_step_factor: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub loss: LossKind,
    pub alpha: f64,
    pub variance_epsilon: f64,
    pub seed: u64,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub tta_in_validation: bool,
    /// Images per forward/backward chunk. Batch-norm statistics are taken
    /// per chunk; gradients are accumulated over the whole batch.
    pub micro_batch_size: usize,
    /// Batch-norm running-statistics momentum used during training instead
    /// of each architecture's own value (0.01 for MobileNetV3, 0.1 for
    /// ShuffleNetV2).
    pub bn_momentum: Option<f64>,
    /// Train the two models on separate threads.
    pub parallel_models: bool,
    pub input_height: usize,
    pub input_width: usize,
    /// Initialise backbones from ImageNet weights in `weights_dir`.
    pub pretrained: bool,
    pub weights_dir: Option<PathBuf>,
    /// Images per forward pass during validation and prediction.
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 5e-4,
            backbone_lr_multiplier: 0.1,
            weight_decay: 1e-4,
            lr_step_epochs: 5,
            lr_step_factor: 0.5,
            batch_size: 64,
            max_epochs: 30,
            loss: LossKind::MseCorr,
            alpha: DEFAULT_ALPHA,
            variance_epsilon: DEFAULT_VARIANCE_EPSILON,
            seed: 0,
            train_fraction: 0.8,
            split_seed: 0,
            tta_in_validation: false,
            micro_batch_size: 16,
            bn_momentum: None,
            parallel_models: false,
            input_height: INPUT_SIZE.0,
            input_width: INPUT_SIZE.1,
            pretrained: true,
            weights_dir: None,
            eval_batch_size: 16,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let cfg: Self = toml::from_str(text).map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        let positive = [
            ("base_lr", self.base_lr),
            ("lr_step_factor", self.lr_step_factor),
            ("variance_epsilon", self.variance_epsilon),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        let m = self.backbone_lr_multiplier;
        if !(m > 0.0 && m <= 1.0) {
            return bad(format!("backbone_lr_multiplier must lie in (0, 1], got {m}"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if self.batch_size < 2 {
            return bad(format!(
                "batch_size must be >= 2 for the correlation term, got {}",
                self.batch_size
            ));
        }
        for (name, v) in [
            ("lr_step_epochs", self.lr_step_epochs),
            ("max_epochs", self.max_epochs),
            ("micro_batch_size", self.micro_batch_size),
            ("input_height", self.input_height),
            ("input_width", self.input_width),
            ("eval_batch_size", self.eval_batch_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be > 0"));
            }
        }
        if self.micro_batch_size < 2 {
            return bad("micro_batch_size must be >= 2 for batch normalization".into());
        }
        if let Some(m) = self.bn_momentum {
            if !(m > 0.0 && m <= 1.0) {
                return bad(format!("bn_momentum must lie in (0, 1], got {m}"));
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        Ok(())
    }

    pub fn split(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_fraction,
            seed: self.split_seed,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            alpha: self.alpha,
            variance_epsilon: self.variance_epsilon,
        }
    }

    pub fn input_size(&self) -> (usize, usize) {
        (self.input_height, self.input_width)
    }

    /// Head learning rate during 0-based epoch `epoch`:
    /// `base_lr * lr_step_factor ^ floor(epoch / lr_step_epochs)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.base_lr * self.lr_step_factor.powi((epoch / self.lr_step_epochs) as i32)
    }

    pub fn backbone_lr_at(&self, epoch: usize) -> f64 {
        self.lr_at(epoch) * self.backbone_lr_multiplier
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
