use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{AblationFlags, LossWeights, ModelConfig, TrainConfig};
use super::{evaluate, Trainer};
use crate::data::DatasetManifest;
use crate::error::{Error, Result};

/// One configuration of the ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub flags: AblationFlags,
    pub weights: LossWeights,
}

impl AblationRow {
    fn new(name: &str, flags: AblationFlags, weights: LossWeights) -> Self {
        AblationRow {
            name: name.to_string(),
            flags,
            weights,
        }
    }
}

/// The nine standard rows: component build-up, then single-toggle variants of the full model.
pub fn default_grid(weights: LossWeights) -> Vec<AblationRow> {
    let full = AblationFlags::full();
    let base = AblationFlags::baseline();
    vec![
        AblationRow::new("baseline", base, weights),
        AblationRow::new(
            "+sda",
            AblationFlags {
                sda: true,
                aux_warped_ce: true,
                ..base
            },
            weights,
        ),
        AblationRow::new("+gae", AblationFlags { gae: true, ..base }, weights),
        AblationRow::new(
            "+gae+gat",
            AblationFlags {
                gae: true,
                gat: true,
                ..base
            },
            weights,
        ),
        AblationRow::new("full", full, weights),
        AblationRow::new(
            "cam_feedback",
            AblationFlags {
                cam_feedback: true,
                ..full
            },
            weights,
        ),
        AblationRow::new("unmasked", AblationFlags { masked: false, ..full }, weights),
        AblationRow::new("raw_angle", AblationFlags { sd_mode: false, ..full }, weights),
        AblationRow::new(
            "cartesian",
            AblationFlags {
                cartesian_mode: true,
                ..full
            },
            weights,
        ),
    ]
}

/// Full model over the Cartesian product of the given loss weights.
pub fn hyperparameter_grid(alphas: &[f64], betas: &[f64], gammas: &[f64]) -> Vec<AblationRow> {
    let mut rows = Vec::new();
    for &alpha in alphas {
        for &beta in betas {
            for &gamma in gammas {
                rows.push(AblationRow::new(
                    &format!("a{alpha}_b{beta}_g{gamma}"),
                    AblationFlags::full(),
                    LossWeights { alpha, beta, gamma },
                ));
            }
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub name: String,
    pub seed: u64,
    pub flags: AblationFlags,
    pub weights: LossWeights,
    pub fingerprint: String,
    pub test_acc: f64,
    pub train_acc: f64,
    pub final_loss: f64,
    /// Set when training stopped on a non-finite loss.
    pub diverged: Option<String>,
}

/// Short hash of the complete configuration of one run.
pub fn fingerprint(model: &ModelConfig, train: &TrainConfig) -> String {
    let json = serde_json::to_vec(&(model, train)).expect("configs serialize");
    Sha256::digest(&json).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Trains every row for every seed, in order. Non-finite losses are recorded
/// in the row instead of aborting the suite; `on_result` sees each row as it
/// finishes.
pub fn run_ablation_suite<F>(
    model: &ModelConfig,
    base: &TrainConfig,
    rows: &[AblationRow],
    seeds: &[u64],
    manifest: &DatasetManifest,
    mut on_result: F,
) -> Result<Vec<AblationResult>>
where
    F: FnMut(&AblationResult) -> Result<()>,
{
    let mut out = Vec::with_capacity(rows.len() * seeds.len());
    for row in rows {
        for &seed in seeds {
            let cfg = TrainConfig {
                seed,
                flags: row.flags,
                loss_weights: row.weights,
                eval_each_epoch: false,
                ..base.clone()
            };
            let mut trainer = Trainer::<f32>::new(model, &cfg, manifest.class_names.clone())?;
            let mut last = None;
            let mut diverged = None;
            while trainer.epoch < cfg.epochs {
                match trainer.run_epoch(manifest) {
                    Ok(m) => last = Some(m),
                    Err(e @ Error::NonFinite { .. }) => {
                        diverged = Some(e.to_string());
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            let test_acc = if diverged.is_some() {
                f64::NAN
            } else {
                evaluate(&trainer.model, &manifest.test, &cfg.augment)?.accuracy
            };
            let result = AblationResult {
                name: row.name.clone(),
                seed,
                flags: row.flags,
                weights: row.weights,
                fingerprint: fingerprint(model, &cfg),
                test_acc,
                train_acc: last.as_ref().map_or(f64::NAN, |m| m.train_acc),
                final_loss: last.as_ref().map_or(f64::NAN, |m| m.losses.total),
                diverged,
            };
            log::info!(
                "{} seed {}: test_acc {:.4} final_loss {:.4}",
                result.name,
                seed,
                result.test_acc,
                result.final_loss
            );
            on_result(&result)?;
            out.push(result);
        }
    }
    Ok(out)
}

pub const TABLE_HEADER: &str = "name\tseed\tfingerprint\tsda\tgae\tgat\taux_warped_ce\tcam_feedback\tmasked\tsd_mode\tcartesian_mode\talpha\tbeta\tgamma\ttest_acc\ttrain_acc\tfinal_loss\tdiverged";

impl AblationResult {
    pub fn table_row(&self) -> String {
        let f = &self.flags;
        let b = |v: bool| if v { "1" } else { "0" };
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}",
            self.name,
            self.seed,
            self.fingerprint,
            b(f.sda),
            b(f.gae),
            b(f.gat),
            b(f.aux_warped_ce),
            b(f.cam_feedback),
            b(f.masked),
            b(f.sd_mode),
            b(f.cartesian_mode),
            self.weights.alpha,
            self.weights.beta,
            self.weights.gamma,
            self.test_acc,
            self.train_acc,
            self.final_loss,
            self.diverged.as_deref().unwrap_or("")
        )
    }
}

/// Tab-separated table with a header line.
pub fn write_table<W: Write>(mut w: W, results: &[AblationResult]) -> std::io::Result<()> {
    writeln!(w, "{TABLE_HEADER}")?;
    for r in results {
        writeln!(w, "{}", r.table_row())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_nine_named_rows() {
        let rows = default_grid(LossWeights::default());
        let names: Vec<&str> = rows.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(
            names,
            ["baseline", "+sda", "+gae", "+gae+gat", "full", "cam_feedback", "unmasked", "raw_angle", "cartesian"]
        );
        assert!(!rows[2].flags.aux_warped_ce);
        assert_eq!(rows[4].flags, AblationFlags::full());
    }

    #[test]
    fn sweep_is_cartesian_product() {
        let rows = hyperparameter_grid(&[0.1, 0.3, 0.5], &[0.25, 0.5, 1.0], &[0.25, 0.5, 1.0]);
        assert_eq!(rows.len(), 27);
        assert_eq!(rows[0].weights, LossWeights { alpha: 0.1, beta: 0.25, gamma: 0.25 });
    }

    #[test]
    fn header_and_rows_have_same_width() {
        let r = AblationResult {
            name: "x".into(),
            seed: 1,
            flags: AblationFlags::full(),
            weights: LossWeights::default(),
            fingerprint: "ab".into(),
            test_acc: 0.5,
            train_acc: 0.5,
            final_loss: 1.0,
            diverged: None,
        };
        assert_eq!(r.table_row().split('\t').count(), TABLE_HEADER.split('\t').count());
    }
}
