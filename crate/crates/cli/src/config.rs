use std::fs;
use std::path::Path;

use anyhow::Context;
use geosup::backbone::BackboneConfig;
use geosup::data::SyntheticConfig;
use geosup::gae::GaeConfig;
use geosup::sda::SdaConfig;
use geosup::trainer::{GatConfig, ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::exit::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    /// Component build-up and single-toggle variants.
    #[default]
    Default,
    /// Full model over alpha × beta × gamma.
    Hyperparameter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub grid: GridKind,
    pub seeds: Vec<u64>,
    /// Train on the first `classes` classes only.
    pub classes: Option<usize>,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub gammas: Vec<f64>,
}

impl Default for AblationSection {
    fn default() -> Self {
        AblationSection {
            grid: GridKind::Default,
            seeds: vec![0],
            classes: None,
            alphas: vec![0.1, 0.3, 0.5],
            betas: vec![0.25, 0.5, 1.0],
            gammas: vec![0.25, 0.5, 1.0],
        }
    }
}

/// The whole run description. Every section is optional; unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: SyntheticConfig,
    pub backbone: BackboneConfig,
    pub sda: SdaConfig,
    pub gae: GaeConfig,
    pub gat: GatConfig,
    pub trainer: TrainConfig,
    pub ablation: AblationSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, Failure> {
        let de = toml::Deserializer::parse(text).map_err(|e| Failure::config(format!("invalid TOML: {e}")))?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Failure::config(format!("at `{path}`: {}", e.into_inner().message()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))
            .map_err(Failure::config_from)?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let checks = [
            self.data.validate(),
            self.backbone.validate(),
            self.sda.validate(),
            self.trainer.validate(),
        ];
        for c in checks {
            c?;
        }
        if self.gae.hidden == 0 {
            return Err(Failure::config("gae.hidden must be positive"));
        }
        if self.ablation.seeds.is_empty() {
            return Err(Failure::config("ablation.seeds must not be empty"));
        }
        Ok(())
    }

    pub fn model_config(&self, image_size: usize, num_classes: usize) -> ModelConfig {
        ModelConfig {
            image_size,
            num_classes,
            backbone: self.backbone.clone(),
            sda: self.sda.clone(),
            gae: self.gae.clone(),
            gat: self.gat,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Writes the resolved configuration next to the outputs.
    pub fn echo(&self, out_dir: &Path) -> anyhow::Result<()> {
        fs::write(out_dir.join("config.toml"), self.to_toml())
            .with_context(|| format!("cannot write config echo in {}", out_dir.display()))
    }
}
