use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, Reduction};
use crate::data::AugmentConfig;
use crate::error::{Error, Result};
use crate::gae::{AngleMode, CoordinateMode, GaeConfig};
use crate::sda::SdaConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.3,
            beta: 0.5,
            gamma: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("loss weight {name} must be a nonnegative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// Component toggles. Everything on is the full model; everything off is a
/// plain classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFlags {
    /// Warp the input through the feedback-driven grid for the second pathway.
    /// When off, the second pathway reuses the classification features.
    pub sda: bool,
    pub gae: bool,
    pub gat: bool,
    /// Cross-entropy on the warped pathway's prediction, weight 1.
    pub aux_warped_ce: bool,
    pub cartesian_mode: bool,
    /// Deviation form of the angle loss; off uses the plain masked mean.
    pub sd_mode: bool,
    /// Class-activation map instead of the learned feedback generator.
    pub cam_feedback: bool,
    pub masked: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags::full()
    }
}

impl AblationFlags {
    pub fn full() -> Self {
        AblationFlags {
            sda: true,
            gae: true,
            gat: true,
            aux_warped_ce: true,
            cartesian_mode: false,
            sd_mode: true,
            cam_feedback: false,
            masked: true,
        }
    }

    pub fn baseline() -> Self {
        AblationFlags {
            sda: false,
            gae: false,
            gat: false,
            aux_warped_ce: false,
            ..AblationFlags::full()
        }
    }

    pub fn coordinates(&self) -> CoordinateMode {
        if self.cartesian_mode {
            CoordinateMode::Cartesian
        } else {
            CoordinateMode::Polar
        }
    }

    pub fn angle(&self) -> AngleMode {
        if self.sd_mode {
            AngleMode::Deviation
        } else {
            AngleMode::Raw
        }
    }

    /// Whether the step needs a second pathway at all.
    pub fn any_auxiliary(&self) -> bool {
        self.sda || self.gae || self.gat
    }

    pub fn warped_ce_active(&self) -> bool {
        self.sda && self.aux_warped_ce
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay: f64,
    pub decay_interval_epochs: usize,
    /// Rescale the global gradient to at most this norm; 0 disables clipping.
    pub max_grad_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_decay: 0.9,
            decay_interval_epochs: 5,
            max_grad_norm: 0.0,
        }
    }
}

impl OptimizerConfig {
    /// `lr₀ · decay^⌊epoch / interval⌋`, epochs counted from 0.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.decay_interval_epochs.max(1)) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub deterministic: bool,
    pub optimizer: OptimizerConfig,
    pub loss_weights: LossWeights,
    pub flags: AblationFlags,
    pub reduction: Reduction,
    pub augment: AugmentConfig,
    /// Evaluate on the test split after every epoch.
    pub eval_each_epoch: bool,
    /// After every epoch, reset the batch-norm running statistics to the
    /// average batch statistics of the (unaugmented) training set.
    pub recalibrate_norm: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 16,
            seed: 0,
            deterministic: true,
            optimizer: OptimizerConfig::default(),
            loss_weights: LossWeights::default(),
            flags: AblationFlags::full(),
            reduction: Reduction::Mean,
            augment: AugmentConfig::default(),
            eval_each_epoch: true,
            recalibrate_norm: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("trainer.epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("trainer.batch_size must be at least 1"));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return Err(Error::config(format!("optimizer.lr must be positive, got {}", o.lr)));
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return Err(Error::config(format!("optimizer.momentum must be in [0,1), got {}", o.momentum)));
        }
        if o.weight_decay < 0.0 || o.max_grad_norm < 0.0 {
            return Err(Error::config("optimizer.weight_decay and max_grad_norm must be nonnegative"));
        }
        if !(o.lr_decay > 0.0 && o.lr_decay <= 1.0) {
            return Err(Error::config(format!("optimizer.lr_decay must be in (0,1], got {}", o.lr_decay)));
        }
        if self.flags.cam_feedback && !self.flags.sda {
            return Err(Error::config("flags.cam_feedback requires flags.sda"));
        }
        self.loss_weights.validate()
    }

}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatConfig {
    /// Let the transfer loss also push the warped pathway toward the
    /// classification pathway. Off: the warped pathway is a fixed teacher.
    pub bidirectional: bool,
    /// Linearly ramp γ from 0 over this many epochs; 0 keeps it constant.
    pub warmup_epochs: usize,
}

impl GatConfig {
    /// Transfer weight in effect during `epoch`.
    pub fn gamma_at(&self, gamma: f64, epoch: usize) -> f64 {
        if self.warmup_epochs == 0 {
            gamma
        } else {
            gamma * ((epoch + 1) as f64 / self.warmup_epochs as f64).min(1.0)
        }
    }
}

/// Everything needed to rebuild the network's shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub num_classes: usize,
    pub backbone: BackboneConfig,
    pub sda: SdaConfig,
    pub gae: GaeConfig,
    #[serde(default)]
    pub gat: GatConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 1 {
            return Err(Error::config("model needs at least one class"));
        }
        self.backbone.validate()?;
        self.backbone.feature_side(self.image_size)?;
        self.sda.validate()?;
        if self.gae.hidden == 0 {
            return Err(Error::config("gae.hidden must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_decays_every_interval() {
        let o = OptimizerConfig::default();
        assert_eq!(o.lr_at(0), 0.05);
        assert_eq!(o.lr_at(4), 0.05);
        assert!((o.lr_at(5) - 0.045).abs() < 1e-15);
        assert!((o.lr_at(12) - 0.05 * 0.81).abs() < 1e-15);
    }

    #[test]
    fn gamma_warmup_is_linear() {
        let cfg = GatConfig {
            warmup_epochs: 4,
            ..GatConfig::default()
        };
        assert_eq!(cfg.gamma_at(0.5, 0), 0.125);
        assert_eq!(cfg.gamma_at(0.5, 3), 0.5);
        assert_eq!(cfg.gamma_at(0.5, 10), 0.5);
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = TrainConfig::default();
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.loss_weights.alpha = -1.0;
        assert!(cfg.validate().is_err());
    }
}
