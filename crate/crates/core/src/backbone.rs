//! Convolutional encoder and classification head shared by both pathways.

use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instrument::{record, OpKind};
use crate::nn::{
    global_avg_pool, global_avg_pool_backward, join, relu4, relu_backward, BatchNorm2d, Conv2d,
    ConvCache, Linear, NormCache, Params,
};
use crate::scalar::Float;

/// Probabilities below this are clamped before taking the logarithm.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub input_channels: usize,
    pub stage_channels: Vec<usize>,
    pub stride_per_stage: Vec<usize>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            input_channels: 3,
            stage_channels: vec![32, 64, 128, 256],
            stride_per_stage: vec![2, 2, 2, 2],
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.len() < 2 {
            return Err(Error::config("backbone needs at least two stages"));
        }
        if self.stage_channels.len() != self.stride_per_stage.len() {
            return Err(Error::config(
                "backbone.stage_channels and backbone.stride_per_stage differ in length",
            ));
        }
        if self.stage_channels.contains(&0) || self.stride_per_stage.contains(&0) {
            return Err(Error::config("backbone channels and strides must be positive"));
        }
        if self.input_channels == 0 {
            return Err(Error::config("backbone.input_channels must be positive"));
        }
        Ok(())
    }

    pub fn stride_product(&self) -> usize {
        self.stride_per_stage.iter().product()
    }

    pub fn feature_channels(&self) -> usize {
        *self.stage_channels.last().expect("validated")
    }

    /// Feature-grid side for a square input, or an error when the input does
    /// not divide evenly by the total stride.
    pub fn feature_side(&self, image_size: usize) -> Result<usize> {
        let s = self.stride_product();
        if image_size % s != 0 || image_size / s == 0 {
            return Err(Error::config(format!(
                "image size {image_size} is not a positive multiple of the total stride {s}"
            )));
        }
        Ok(image_size / s)
    }
}

#[derive(Debug, Clone)]
pub struct Stage<T> {
    pub conv: Conv2d<T>,
    pub norm: BatchNorm2d<T>,
}

/// Stack of conv → batch-norm → ReLU stages. The final ReLU keeps features
/// nonnegative, which the pattern map relies on.
#[derive(Debug, Clone)]
pub struct Encoder<T> {
    pub config: BackboneConfig,
    pub stages: Vec<Stage<T>>,
}

#[derive(Debug, Clone)]
struct StageCache<T> {
    conv: ConvCache<T>,
    norm: NormCache<T>,
    out: Array4<T>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    stages: Vec<StageCache<T>>,
}

impl<T: Float> Encoder<T> {
    pub fn new<R: Rng + ?Sized>(config: &BackboneConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut in_ch = config.input_channels;
        let stages = config
            .stage_channels
            .iter()
            .zip(&config.stride_per_stage)
            .map(|(&out_ch, &stride)| {
                let stage = Stage {
                    conv: Conv2d::new(rng, in_ch, out_ch, 3, stride, 1),
                    norm: BatchNorm2d::new(out_ch),
                };
                in_ch = out_ch;
                stage
            })
            .collect();
        Ok(Encoder {
            config: config.clone(),
            stages,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Encoder {
            config: self.config.clone(),
            stages: self
                .stages
                .iter()
                .map(|s| Stage {
                    conv: s.conv.zeros_like(),
                    norm: s.norm.zeros_like(),
                })
                .collect(),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.config.feature_channels()
    }

    /// `images: [B, C_in, H_I, W_I] -> F: [B, C, H, W]`.
    pub fn encode(&self, images: ArrayView4<T>, train: bool) -> Result<(Array4<T>, EncoderCache<T>)> {
        let shape = images.shape();
        if shape[1] != self.config.input_channels {
            return Err(Error::config(format!(
                "encoder expects {} input channels, got {}",
                self.config.input_channels, shape[1]
            )));
        }
        let s = self.config.stride_product();
        if shape[2] % s != 0 || shape[3] % s != 0 || shape[2] < s || shape[3] < s {
            return Err(Error::config(format!(
                "input {}x{} is not a multiple of the total stride {s}",
                shape[2], shape[3]
            )));
        }
        let mut caches = Vec::with_capacity(self.stages.len());
        let mut x: Option<Array4<T>> = None;
        for stage in &self.stages {
            let input = x.as_ref().map_or(images.view(), |a| a.view());
            let (y, conv) = stage.conv.forward(input);
            let (y, norm) = stage.norm.forward(y.view(), train);
            let y = relu4(y);
            caches.push(StageCache {
                conv,
                norm,
                out: y.clone(),
            });
            x = Some(y);
        }
        Ok((x.expect("at least two stages"), EncoderCache { stages: caches }))
    }

    /// Backpropagates `d_features`, accumulating into `grads`. Returns the
    /// image gradient when `need_input` is set.
    pub fn backward(
        &self,
        cache: &EncoderCache<T>,
        d_features: Array4<T>,
        grads: &mut Encoder<T>,
        need_input: bool,
    ) -> Option<Array4<T>> {
        let mut dy = d_features;
        let n = self.stages.len();
        for i in (0..n).rev() {
            let (stage, sc, g) = (&self.stages[i], &cache.stages[i], &mut grads.stages[i]);
            let d = relu_backward(&sc.out, dy);
            let d = stage.norm.backward(&sc.norm, d.view(), &mut g.norm);
            let need = i > 0 || need_input;
            match stage.conv.backward(&sc.conv, d.view(), &mut g.conv, need) {
                Some(dx) => dy = dx,
                None => return None,
            }
        }
        Some(dy)
    }

    /// Replaces the running estimates with the mean batch statistics of
    /// training-mode passes over `batches`, using the current weights.
    pub fn recalibrate(&mut self, batches: &[Array4<T>]) -> Result<()> {
        if batches.is_empty() {
            return Ok(());
        }
        let mut sums: Vec<(Array1<T>, Array1<T>)> = self
            .stages
            .iter()
            .map(|s| (Array1::zeros(s.norm.gamma.len()), Array1::zeros(s.norm.gamma.len())))
            .collect();
        for batch in batches {
            let (_, cache) = self.encode(batch.view(), true)?;
            for (acc, sc) in sums.iter_mut().zip(&cache.stages) {
                acc.0 += &sc.norm.batch_mean;
                acc.1 += &sc.norm.batch_var;
            }
        }
        let inv = T::one() / T::from_usize_lossy(batches.len());
        for (stage, (mean, var)) in self.stages.iter_mut().zip(sums) {
            stage.norm.running_mean = mean.mapv(|v| v * inv);
            stage.norm.running_var = var.mapv(|v| v * inv);
        }
        Ok(())
    }

    /// Folds the batch statistics from a training-mode pass into the running estimates.
    pub fn update_running(&mut self, cache: &EncoderCache<T>) {
        for (stage, sc) in self.stages.iter_mut().zip(&cache.stages) {
            stage.norm.update_running(&sc.norm);
        }
    }

    pub fn visit_buffers(&self, f: &mut dyn FnMut(&str, &[T], &[usize])) {
        for (i, s) in self.stages.iter().enumerate() {
            let p = format!("encoder.stage{i}.norm");
            f(&join(&p, "running_mean"), s.norm.running_mean.as_slice().unwrap(), s.norm.running_mean.shape());
            f(&join(&p, "running_var"), s.norm.running_var.as_slice().unwrap(), s.norm.running_var.shape());
        }
    }

    pub fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut [T], &[usize])) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            let p = format!("encoder.stage{i}.norm");
            let shape = s.norm.running_mean.shape().to_vec();
            f(&join(&p, "running_mean"), s.norm.running_mean.as_slice_mut().unwrap(), &shape);
            f(&join(&p, "running_var"), s.norm.running_var.as_slice_mut().unwrap(), &shape);
        }
    }
}

impl<T: Float> Params<T> for Encoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T], &[usize])) {
        for (i, s) in self.stages.iter().enumerate() {
            let p = join(prefix, &format!("stage{i}"));
            s.conv.visit(&join(&p, "conv"), f);
            s.norm.visit(&join(&p, "norm"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T], &[usize])) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            let p = join(prefix, &format!("stage{i}"));
            s.conv.visit_mut(&join(&p, "conv"), f);
            s.norm.visit_mut(&join(&p, "norm"), f);
        }
    }
}

/// Class probabilities for a batch, one row per image.
#[derive(Debug, Clone)]
pub struct Prediction<T> {
    pub logits: Array2<T>,
    pub probs: Array2<T>,
    pub pooled: Array2<T>,
}

impl<T: Float> Prediction<T> {
    /// Arg-max class per row; ties go to the lowest index.
    pub fn top1(&self) -> Vec<usize> {
        self.probs
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (k, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Float>(logits: ArrayView2<T>) -> Array2<T> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let m = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    record(OpKind::Softmax, 3 * logits.len() as u64);
    out
}

/// Global-average-pool + linear classifier.
#[derive(Debug, Clone)]
pub struct Classifier<T> {
    pub linear: Linear<T>,
}

impl<T: Float> Classifier<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, channels: usize, classes: usize) -> Self {
        Classifier {
            linear: Linear::new(rng, channels, classes),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Classifier {
            linear: self.linear.zeros_like(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.linear.outputs()
    }

    /// `probs = softmax(linear(GAP(features)))`.
    pub fn classify(&self, features: ArrayView4<T>) -> Result<Prediction<T>> {
        if features.shape()[1] != self.linear.inputs() {
            return Err(Error::config(format!(
                "classifier expects {} channels, got {}",
                self.linear.inputs(),
                features.shape()[1]
            )));
        }
        let pooled = global_avg_pool(features);
        let logits = self.linear.forward(pooled.view());
        let probs = softmax(logits.view());
        Ok(Prediction {
            logits,
            probs,
            pooled,
        })
    }

    /// Gradient of the features given the logit gradient.
    pub fn backward(
        &self,
        pred: &Prediction<T>,
        d_logits: ArrayView2<T>,
        feature_hw: (usize, usize),
        grads: &mut Classifier<T>,
    ) -> Array4<T> {
        let d_pooled = self.linear.backward(pred.pooled.view(), d_logits, &mut grads.linear);
        global_avg_pool_backward(d_pooled.view(), feature_hw.0, feature_hw.1)
    }
}

impl<T: Float> Params<T> for Classifier<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T], &[usize])) {
        self.linear.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T], &[usize])) {
        self.linear.visit_mut(prefix, f);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

/// Cross-entropy `−Σ l · log y` per row, reduced over the batch.
///
/// Probabilities are clamped at [`LOG_EPS`] so an exact zero at the true
/// class yields a finite loss of `ln(1e12)`.
pub fn classification_loss<T: Float>(
    probs: ArrayView2<T>,
    one_hot: ArrayView2<T>,
    reduction: Reduction,
) -> Result<T> {
    if probs.dim() != one_hot.dim() {
        return Err(Error::config(format!(
            "prediction shape {:?} does not match label shape {:?}",
            probs.dim(),
            one_hot.dim()
        )));
    }
    let eps = T::lit(LOG_EPS);
    let total = probs
        .iter()
        .zip(one_hot.iter())
        .fold(T::zero(), |acc, (&p, &l)| {
            if l == T::zero() {
                acc
            } else {
                acc - l * p.max(eps).ln()
            }
        });
    Ok(match reduction {
        Reduction::Sum => total,
        Reduction::Mean => total / T::from_usize_lossy(probs.nrows().max(1)),
    })
}

/// Gradient of [`classification_loss`] with respect to the logits.
pub fn classification_loss_grad<T: Float>(
    probs: ArrayView2<T>,
    one_hot: ArrayView2<T>,
    reduction: Reduction,
) -> Array2<T> {
    let mut d = &probs * &one_hot.sum_axis(Axis(1)).insert_axis(Axis(1)) - &one_hot;
    if reduction == Reduction::Mean {
        let inv = T::one() / T::from_usize_lossy(probs.nrows().max(1));
        d.mapv_inplace(|v| v * inv);
    }
    d
}

pub fn one_hot<T: Float>(labels: &[usize], classes: usize) -> Array2<T> {
    let mut out = Array2::zeros((labels.len(), classes));
    for (i, &l) in labels.iter().enumerate() {
        out[[i, l]] = T::one();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn strides_set_feature_side() {
        let cfg = BackboneConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = Encoder::<f32>::new(&cfg, &mut rng).unwrap();
        let x = Array4::<f32>::from_elem((1, 3, 64, 64), 0.3);
        let (f, _) = enc.encode(x.view(), true).unwrap();
        assert_eq!(f.shape(), &[1, 256, 4, 4]);
        assert_eq!(cfg.feature_side(64).unwrap(), 4);
        assert!(cfg.feature_side(60).is_err());
    }

    #[test]
    fn zero_image_gives_zero_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = Encoder::<f64>::new(&BackboneConfig::default(), &mut rng).unwrap();
        let x = Array4::<f64>::zeros((2, 3, 32, 32));
        let (f, _) = enc.encode(x.view(), true).unwrap();
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn features_are_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = Encoder::<f32>::new(&BackboneConfig::default(), &mut rng).unwrap();
        let x = Array4::from_shape_fn((2, 3, 32, 32), |(b, c, i, j)| ((b + c + i * j) % 7) as f32 / 7.0);
        let (f, _) = enc.encode(x.view(), true).unwrap();
        assert!(f.iter().all(|&v| v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn wrong_input_shape_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = Encoder::<f32>::new(&BackboneConfig::default(), &mut rng).unwrap();
        let x = Array4::<f32>::zeros((1, 1, 64, 64));
        assert!(matches!(enc.encode(x.view(), false), Err(Error::Config(_))));
        let x = Array4::<f32>::zeros((1, 3, 40, 40));
        assert!(matches!(enc.encode(x.view(), false), Err(Error::Config(_))));
    }

    #[test]
    fn uniform_logits_give_uniform_probs() {
        let p = softmax(array![[2.0f64, 2.0, 2.0, 2.0]].view());
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let p = softmax(array![[1e4f64, 0.0, -3.0]].view());
        assert!((p[[0, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_values() {
        let oh = one_hot::<f64>(&[2], 4);
        assert_eq!(classification_loss(oh.view(), oh.view(), Reduction::Mean).unwrap(), 0.0);
        let uniform = Array2::from_elem((1, 4), 0.25f64);
        let l = classification_loss(uniform.view(), oh.view(), Reduction::Mean).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!((l - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn batch_reduction_modes() {
        let probs = array![[0.5f64, 0.5], [0.25, 0.75]];
        let oh = one_hot::<f64>(&[0, 1], 2);
        let sum = classification_loss(probs.view(), oh.view(), Reduction::Sum).unwrap();
        let mean = classification_loss(probs.view(), oh.view(), Reduction::Mean).unwrap();
        let expected = -(0.5f64.ln() + 0.75f64.ln());
        assert!((sum - expected).abs() < 1e-12);
        assert!((mean - expected / 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_is_clamped() {
        let probs = array![[1.0f64, 0.0]];
        let oh = one_hot::<f64>(&[1], 2);
        let l = classification_loss(probs.view(), oh.view(), Reduction::Sum).unwrap();
        assert!((l - (1e12f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn top1_ties_go_to_lowest_index() {
        let pred = Prediction {
            logits: array![[0.0f64, 0.0]],
            probs: array![[0.5f64, 0.5]],
            pooled: array![[0.0f64]],
        };
        assert_eq!(pred.top1(), vec![0]);
    }
}
