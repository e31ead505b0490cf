//! One optimization step: both pathways forward, the composite objective,
//! and the backward pass into a gradient buffer.

use ndarray::{s, Array4, ArrayView4, Axis};
use serde::{Deserialize, Serialize};

use super::config::{AblationFlags, LossWeights};
use super::model::Model;
use crate::backbone::{classification_loss, classification_loss_grad, one_hot, EncoderCache, Reduction};
use crate::error::{Error, Result};
use crate::gae::{angle_loss_grad, geometry_targets, locate_reference, masked_l1_grad, pattern_map};
use crate::gat::transfer_batch;
use crate::nn::{global_avg_pool, global_avg_pool_backward};
use crate::scalar::Float;
use crate::sda::{amplify_backward, amplify_batch, regularization_loss_batch};

/// Scalar value of every objective term for one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_reg: f64,
    pub l_dis: f64,
    pub l_ang: f64,
    pub l_gae: f64,
    pub l_gat: f64,
    pub aux_cls: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// `l_cls + α·l_reg + β·l_gae + γ·l_gat + aux_cls`, recomputed in `f64`.
    pub fn recombine(&self, weights: &LossWeights, gamma: f64) -> f64 {
        self.l_cls + weights.alpha * self.l_reg + weights.beta * self.l_gae + gamma * self.l_gat + self.aux_cls
    }

    pub fn additivity_error(&self, weights: &LossWeights, gamma: f64) -> f64 {
        (self.recombine(weights, gamma) - self.total).abs()
    }

    pub(crate) fn accumulate(&mut self, other: &LossBreakdown, weight: f64) {
        self.l_cls += weight * other.l_cls;
        self.l_reg += weight * other.l_reg;
        self.l_dis += weight * other.l_dis;
        self.l_ang += weight * other.l_ang;
        self.l_gae += weight * other.l_gae;
        self.l_gat += weight * other.l_gat;
        self.aux_cls += weight * other.aux_cls;
        self.total += weight * other.total;
    }
}

/// Settings that vary per step.
#[derive(Debug, Clone, Copy)]
pub struct StepSettings {
    pub flags: AblationFlags,
    pub weights: LossWeights,
    /// Transfer weight in effect (after any warm-up).
    pub gamma: f64,
    pub gat_bidirectional: bool,
    pub reduction: Reduction,
    pub epoch: usize,
    pub step: usize,
}

pub struct StepOutput<T> {
    pub losses: LossBreakdown,
    pub grads: Model<T>,
    /// Correct top-1 predictions of the classification pathway.
    pub correct: usize,
    /// Classification-pathway batch statistics, for the running estimates.
    pub(crate) cache: EncoderCache<T>,
}

fn check<T: Float>(component: &'static str, v: T, s: &StepSettings) -> Result<f64> {
    let x = v.to_f64_lossy();
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite {
            component,
            epoch: s.epoch,
            step: s.step,
            value: x,
        })
    }
}

/// Forward pass of every enabled component plus the full backward pass.
///
/// Disabled components are skipped and report exactly zero. Without
/// amplification the second pathway is the classification pathway itself.
pub fn forward_backward<T: Float>(
    model: &Model<T>,
    images: ArrayView4<T>,
    labels: &[usize],
    settings: &StepSettings,
) -> Result<StepOutput<T>> {
    let flags = settings.flags;
    let b = images.shape()[0];
    let classes = model.classifier.num_classes();
    if labels.len() != b {
        return Err(Error::config(format!("{} labels for a batch of {b}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::config(format!("label {bad} out of range for {classes} classes")));
    }
    let targets = one_hot::<T>(labels, classes);
    let alpha = T::lit(settings.weights.alpha);
    let beta = T::lit(settings.weights.beta);
    let gamma = T::lit(settings.gamma);
    let mut grads = model.zeros_like();
    let mut losses = LossBreakdown::default();

    // Classification pathway.
    let (features, enc_cache) = model.encoder.encode(images, true)?;
    let (_, c, h, w) = features.dim();
    let pred = model.classifier.classify(features.view())?;
    let l_cls = classification_loss(pred.probs.view(), targets.view(), settings.reduction)?;
    losses.l_cls = check("classification", l_cls, settings)?;
    let correct = pred.top1().iter().zip(labels).filter(|(p, l)| p == l).count();
    let d_logits = classification_loss_grad(pred.probs.view(), targets.view(), settings.reduction);
    let mut d_features = model
        .classifier
        .backward(&pred, d_logits.view(), (h, w), &mut grads.classifier);
    let mut total = l_cls;

    if !flags.any_auxiliary() {
        losses.total = check("total", total, settings)?;
        model.encoder.backward(&enc_cache, d_features, &mut grads.encoder, false);
        return Ok(StepOutput {
            losses,
            grads,
            correct,
            cache: enc_cache,
        });
    }

    // Amplification.
    let mut amplified = None;
    if flags.sda {
        let maps = model.feedback(features.view(), &flags, labels);
        let l_reg = regularization_loss_batch(maps.view());
        losses.l_reg = check("regularization", l_reg, settings)?;
        total += alpha * l_reg;
        let amp = amplify_batch(&model.plan, images, maps);
        let (t, t_cache) = model.encoder.encode(amp.warped.view(), true)?;
        amplified = Some((amp, t, t_cache));
    }
    let detail: ArrayView4<T> = amplified.as_ref().map_or(features.view(), |(_, t, _)| t.view());
    let mut d_detail = Array4::<T>::zeros(detail.raw_dim());

    if flags.warped_ce_active() {
        let pred_t = model.classifier.classify(detail)?;
        let aux = classification_loss(pred_t.probs.view(), targets.view(), settings.reduction)?;
        losses.aux_cls = check("auxiliary classification", aux, settings)?;
        total += aux;
        let d = classification_loss_grad(pred_t.probs.view(), targets.view(), settings.reduction);
        d_detail += &model.classifier.backward(&pred_t, d.view(), (h, w), &mut grads.classifier);
    }

    if flags.gae {
        let inv_b = T::one() / T::from_usize_lossy(b);
        let (mut l_dis, mut l_ang) = (T::zero(), T::zero());
        let mut empty = 0;
        for bi in 0..b {
            let t = detail.index_axis(Axis(0), bi);
            let pm = pattern_map(t);
            let reference = locate_reference(&pm);
            let field = geometry_targets::<T>(flags.coordinates(), reference, h, w);
            let mask = pm.loss_mask(reference, flags.masked);
            if !mask.iter().any(|&m| m) {
                empty += 1;
                continue;
            }
            let (p, head_cache) = model.polar_head.predict(t, reference);
            let (dis, g_rho) = masked_l1_grad(p.rho_hat.view(), field.rho.view(), mask.view());
            let (ang, g_theta) = angle_loss_grad(p.theta_hat.view(), field.theta.view(), mask.view(), flags.angle());
            l_dis += dis * inv_b;
            l_ang += ang * inv_b;
            let scale = beta * inv_b;
            let d_t = model.polar_head.backward(
                &head_cache,
                g_rho.mapv(|v| v * scale).view(),
                g_theta.mapv(|v| v * scale).view(),
                &mut grads.polar_head,
            );
            d_detail.slice_mut(s![bi, .., .., ..]).zip_mut_with(&d_t, |a, &g| *a += g);
        }
        if empty > 0 {
            log::warn!(
                "epoch {} step {}: {empty} of {b} images have an empty geometry mask",
                settings.epoch,
                settings.step
            );
        }
        losses.l_dis = check("distance", l_dis, settings)?;
        losses.l_ang = check("angle", l_ang, settings)?;
        losses.l_gae = check("geometry", l_dis + l_ang, settings)?;
        total += beta * (l_dis + l_ang);
    }

    if flags.gat {
        let pooled_t = global_avg_pool(detail);
        let (l_gat, d_teacher, d_student) = transfer_batch(pooled_t.view(), pred.pooled.view());
        losses.l_gat = check("transfer", l_gat, settings)?;
        total += gamma * l_gat;
        d_features += &global_avg_pool_backward(d_student.mapv(|v| v * gamma).view(), h, w);
        if settings.gat_bidirectional {
            d_detail += &global_avg_pool_backward(d_teacher.mapv(|v| v * gamma).view(), h, w);
        }
    }
    losses.total = check("total", total, settings)?;

    // Backward: amplified pathway first, then the classification pathway.
    match amplified {
        Some((amp, _, t_cache)) => {
            let d_warped = model
                .encoder
                .backward(&t_cache, d_detail, &mut grads.encoder, true)
                .expect("input gradient requested");
            if !flags.cam_feedback {
                let mut d_maps = amplify_backward(&model.plan, images, &amp, d_warped.view());
                let reg = alpha / T::from_usize_lossy(amp.maps.len());
                d_maps.mapv_inplace(|v| v + reg);
                d_features += &model
                    .generator
                    .backward(features.view(), amp.maps.view(), d_maps.view(), &mut grads.generator);
            }
        }
        None => d_features += &d_detail,
    }
    debug_assert_eq!(d_features.shape()[1], c);
    model.encoder.backward(&enc_cache, d_features, &mut grads.encoder, false);

    Ok(StepOutput {
        losses,
        grads,
        correct,
        cache: enc_cache,
    })
}

/// Objective terms for one batch; the gradient is computed and discarded.
pub fn forward_step<T: Float>(
    model: &Model<T>,
    images: ArrayView4<T>,
    labels: &[usize],
    settings: &StepSettings,
) -> Result<LossBreakdown> {
    forward_backward(model, images, labels, settings).map(|o| o.losses)
}
