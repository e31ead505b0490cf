//! Training, evaluation, checkpointing and the ablation harness.

mod ablation;
mod checkpoint;
mod config;
mod model;
mod optim;
mod step;

pub use ablation::{
    default_grid, fingerprint, hyperparameter_grid, run_ablation_suite, write_table, AblationResult, AblationRow,
    TABLE_HEADER,
};
pub use checkpoint::{Checkpoint, CheckpointHeader, TensorEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{AblationFlags, GatConfig, LossWeights, ModelConfig, OptimizerConfig, TrainConfig};
pub use model::{stack_images, Explanation, Model};
pub use optim::Sgd;
pub use step::{forward_backward, forward_step, LossBreakdown, StepOutput, StepSettings};

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment, center_view, AugmentConfig, DatasetManifest, LabeledSample};
use crate::error::{Error, Result};
use crate::nn::Params;
use crate::scalar::Float;

const EVAL_BATCH: usize = 32;

/// One line of the metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub gamma: f64,
    #[serde(flatten)]
    pub losses: LossBreakdown,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    pub steps: usize,
}

fn mix(parts: &[u64]) -> u64 {
    parts.iter().fold(0x243f_6a88_85a3_08d3_u64, |h, &p| {
        (h ^ p.wrapping_mul(0x9e37_79b9_7f4a_7c15)).rotate_left(29).wrapping_mul(0xbf58_476d_1ce4_e5b9)
    })
}

/// The test-time view of an image: the center crop matching the train-time
/// random crop, when cropping is enabled.
pub fn eval_view(image: &Array3<f32>, augment: &AugmentConfig) -> Array3<f32> {
    if augment.crop {
        center_view(image.view(), augment.crop_scale)
    } else {
        image.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

/// Top-1 accuracy using only the encoder and classifier.
pub fn evaluate<T: Float>(model: &Model<T>, samples: &[LabeledSample], augment: &AugmentConfig) -> Result<EvalReport> {
    let classes = model.classifier.num_classes();
    let mut correct = 0;
    for chunk in samples.chunks(EVAL_BATCH) {
        if let Some(s) = chunk.iter().find(|s| s.label >= classes) {
            return Err(Error::config(format!(
                "sample {} has label {} but the model has {classes} classes",
                s.id, s.label
            )));
        }
        let views: Vec<Array3<f32>> = chunk.iter().map(|s| eval_view(&s.image, augment)).collect();
        let refs: Vec<&Array3<f32>> = views.iter().collect();
        let pred = model.predict(stack_images::<T>(&refs).view())?;
        correct += pred.top1().iter().zip(chunk).filter(|(p, s)| **p == s.label).count();
    }
    let total = samples.len();
    Ok(EvalReport {
        correct,
        total,
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
    })
}

/// Test-split accuracy of a checkpoint; the dataset must have the same class count.
pub fn evaluate_checkpoint<T: Float>(checkpoint: &Checkpoint<T>, manifest: &DatasetManifest) -> Result<EvalReport> {
    let k = checkpoint.model.config.num_classes;
    if manifest.num_classes() != k {
        return Err(Error::config(format!(
            "checkpoint has {k} classes but the dataset has {}",
            manifest.num_classes()
        )));
    }
    evaluate(&checkpoint.model, &manifest.test, &checkpoint.train.augment)
}

/// Owns the model and optimizer state across epochs.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub model: Model<T>,
    pub optimizer: Sgd<T>,
    pub config: TrainConfig,
    pub class_names: Vec<String>,
    /// Epochs completed so far.
    pub epoch: usize,
    order_seed: u64,
}

impl<T: Float> Trainer<T> {
    pub fn new(model_config: &ModelConfig, config: &TrainConfig, class_names: Vec<String>) -> Result<Self> {
        config.validate()?;
        if class_names.len() != model_config.num_classes {
            return Err(Error::config("class name count does not match the model"));
        }
        let model = Model::new(model_config, config.seed)?;
        let optimizer = Sgd::new(config.optimizer, model.num_params());
        Ok(Trainer {
            order_seed: order_seed(config),
            model,
            optimizer,
            config: config.clone(),
            class_names,
            epoch: 0,
        })
    }

    pub fn from_checkpoint(checkpoint: Checkpoint<T>) -> Self {
        Trainer {
            order_seed: order_seed(&checkpoint.train),
            model: checkpoint.model,
            optimizer: checkpoint.optimizer,
            config: checkpoint.train,
            class_names: checkpoint.class_names,
            epoch: checkpoint.epoch,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            model: self.model.clone(),
            optimizer: self.optimizer.clone(),
            train: self.config.clone(),
            class_names: self.class_names.clone(),
            epoch: self.epoch,
        }
    }

    fn batches(&self, n: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(&[self.order_seed, self.epoch as u64])));
        let mut batches: Vec<Vec<usize>> = order.chunks(self.config.batch_size).map(<[usize]>::to_vec).collect();
        // a lone trailing image would make batch statistics degenerate
        if batches.len() > 1 && batches.last().map_or(false, |b| b.len() == 1) {
            let last = batches.pop().unwrap();
            batches.last_mut().unwrap().extend(last);
        }
        batches
    }

    /// Trains one epoch and evaluates on the test split if configured.
    pub fn run_epoch(&mut self, manifest: &DatasetManifest) -> Result<EpochMetrics> {
        if manifest.train.is_empty() {
            return Err(Error::Ingestion("training split is empty".into()));
        }
        if manifest.num_classes() != self.model.config.num_classes {
            return Err(Error::config(format!(
                "model has {} classes but the dataset has {}",
                self.model.config.num_classes,
                manifest.num_classes()
            )));
        }
        let epoch = self.epoch;
        let lr = self.config.optimizer.lr_at(epoch);
        let gamma = self.model.config.gat.gamma_at(self.config.loss_weights.gamma, epoch);
        let mut sum = LossBreakdown::default();
        let mut correct = 0;
        let mut seen = 0;
        let batches = self.batches(manifest.train.len());
        for (step, batch) in batches.iter().enumerate() {
            let samples: Vec<LabeledSample> = batch
                .iter()
                .map(|&i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[self.order_seed, epoch as u64, i as u64, 1]));
                    augment(&manifest.train[i], &self.config.augment, &mut rng)
                })
                .collect();
            let refs: Vec<&Array3<f32>> = samples.iter().map(|s| &s.image).collect();
            let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
            let images = stack_images::<T>(&refs);
            let settings = StepSettings {
                flags: self.config.flags,
                weights: self.config.loss_weights,
                gamma,
                gat_bidirectional: self.model.config.gat.bidirectional,
                reduction: self.config.reduction,
                epoch,
                step,
            };
            let out = forward_backward(&self.model, images.view(), &labels, &settings).map_err(|e| {
                if let Error::NonFinite { .. } = e {
                    log::error!("aborting: {e}");
                }
                e
            })?;
            debug_assert!(
                out.losses.additivity_error(&settings.weights, gamma) <= 1e-6 * out.losses.total.abs().max(1.0),
                "loss terms do not add up: {:?}",
                out.losses
            );
            self.optimizer.step(&mut self.model, &out.grads, lr);
            self.model.encoder.update_running(&out.cache);
            sum.accumulate(&out.losses, batch.len() as f64);
            correct += out.correct;
            seen += batch.len();
        }
        let mut losses = LossBreakdown::default();
        losses.accumulate(&sum, 1.0 / seen as f64);
        if self.config.recalibrate_norm {
            self.recalibrate_norm(manifest)?;
        }
        self.epoch += 1;
        let test_acc = if self.config.eval_each_epoch && !manifest.test.is_empty() {
            Some(evaluate(&self.model, &manifest.test, &self.config.augment)?.accuracy)
        } else {
            None
        };
        Ok(EpochMetrics {
            epoch,
            lr,
            gamma,
            losses,
            train_acc: correct as f64 / seen as f64,
            test_acc,
            steps: batches.len(),
        })
    }

    /// Recomputes the encoder's running statistics from the training split,
    /// seen as at test time and batched as in training.
    pub fn recalibrate_norm(&mut self, manifest: &DatasetManifest) -> Result<()> {
        let batches: Vec<_> = self
            .batches(manifest.train.len())
            .iter()
            .map(|batch| {
                let views: Vec<Array3<f32>> = batch
                    .iter()
                    .map(|&i| eval_view(&manifest.train[i].image, &self.config.augment))
                    .collect();
                let refs: Vec<&Array3<f32>> = views.iter().collect();
                stack_images::<T>(&refs)
            })
            .collect();
        self.model.encoder.recalibrate(&batches)
    }

    /// Runs epochs until `config.epochs` are complete, calling `on_epoch`
    /// after each one (for logging and checkpointing).
    pub fn fit<F>(&mut self, manifest: &DatasetManifest, mut on_epoch: F) -> Result<Vec<EpochMetrics>>
    where
        F: FnMut(&EpochMetrics, &Trainer<T>) -> Result<()>,
    {
        let mut history = Vec::new();
        while self.epoch < self.config.epochs {
            let m = self.run_epoch(manifest)?;
            log::info!(
                "epoch {} lr {:.3e} loss {:.4} train_acc {:.3} test_acc {}",
                m.epoch,
                m.lr,
                m.losses.total,
                m.train_acc,
                m.test_acc.map_or("-".to_string(), |a| format!("{a:.3}"))
            );
            on_epoch(&m, self)?;
            history.push(m);
        }
        Ok(history)
    }
}

fn order_seed(config: &TrainConfig) -> u64 {
    if config.deterministic {
        config.seed
    } else {
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_nanos() as u64);
        let s = mix(&[config.seed, nanos]);
        log::info!("non-deterministic run: data order seed {s}");
        s
    }
}

pub struct TrainOutcome<T> {
    pub trainer: Trainer<T>,
    pub history: Vec<EpochMetrics>,
}

/// Trains a fresh model for `config.epochs` epochs.
pub fn train<T: Float>(
    model_config: &ModelConfig,
    config: &TrainConfig,
    manifest: &DatasetManifest,
) -> Result<TrainOutcome<T>> {
    let mut trainer = Trainer::new(model_config, config, manifest.class_names.clone())?;
    let history = trainer.fit(manifest, |_, _| Ok(()))?;
    Ok(TrainOutcome { trainer, history })
}

/// Model shape for a dataset with otherwise default settings.
pub fn model_config_for(manifest: &DatasetManifest) -> ModelConfig {
    ModelConfig {
        image_size: manifest.image_size,
        num_classes: manifest.num_classes(),
        backbone: Default::default(),
        sda: Default::default(),
        gae: Default::default(),
        gat: Default::default(),
    }
}
