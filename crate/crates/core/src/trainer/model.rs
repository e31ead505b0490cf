use ndarray::{s, Array2, Array3, Array4, ArrayView3, ArrayView4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{AblationFlags, ModelConfig};
use crate::backbone::{Classifier, Encoder, Prediction};
use crate::error::Result;
use crate::gae::{locate_reference, pattern_map, Cell};
use crate::nn::{join, Params};
use crate::scalar::Float;
use crate::sda::{cam_feedback, resample, FeedbackGenerator, GridPlan, SamplingGrid};

/// All trainable parts. Both pathways run through the same `encoder`.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub encoder: Encoder<T>,
    pub classifier: Classifier<T>,
    pub generator: FeedbackGenerator<T>,
    pub polar_head: crate::gae::PolarHead<T>,
    pub(crate) plan: GridPlan<T>,
}

impl<T: Float> Model<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(&config.backbone, &mut rng)?;
        let c = encoder.out_channels();
        let classifier = Classifier::new(&mut rng, c, config.num_classes);
        let polar_head = crate::gae::PolarHead::new(&mut rng, c, config.gae.hidden);
        let side = config.backbone.feature_side(config.image_size)?;
        let plan = GridPlan::new(
            (side, side),
            (config.image_size, config.image_size),
            config.sda.sigma,
            config.sda.grid_side,
        )?;
        Ok(Model {
            config: config.clone(),
            encoder,
            classifier,
            generator: FeedbackGenerator::new(c),
            polar_head,
            plan,
        })
    }

    /// A same-shaped model with every parameter zero, used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        Model {
            config: self.config.clone(),
            encoder: self.encoder.zeros_like(),
            classifier: self.classifier.zeros_like(),
            generator: self.generator.zeros_like(),
            polar_head: self.polar_head.zeros_like(),
            plan: self.plan.clone(),
        }
    }

    pub fn plan(&self) -> &GridPlan<T> {
        &self.plan
    }

    /// Inference path: encoder and classifier only, batch-norm in eval mode.
    pub fn predict(&self, images: ArrayView4<T>) -> Result<Prediction<T>> {
        let (features, _) = self.encoder.encode(images, false)?;
        self.classifier.classify(features.view())
    }

    /// Feedback maps for a batch from classification features.
    pub(crate) fn feedback(&self, features: ArrayView4<T>, flags: &AblationFlags, classes: &[usize]) -> Array3<T> {
        if flags.cam_feedback {
            let (b, _, h, w) = features.dim();
            let mut maps = Array3::zeros((b, h, w));
            for bi in 0..b {
                let weights = self.classifier.linear.weight.row(classes[bi]);
                let cam = cam_feedback(features.index_axis(Axis(0), bi), weights);
                maps.slice_mut(s![bi, .., ..]).assign(&cam);
            }
            maps
        } else {
            self.generator.generate(features)
        }
    }

    /// Intermediate maps for one image, for visual inspection.
    pub fn explain(&self, image: ArrayView3<T>, flags: &AblationFlags) -> Result<Explanation<T>> {
        let batch = image.insert_axis(Axis(0));
        let (features, _) = self.encoder.encode(batch, false)?;
        let pred = self.classifier.classify(features.view())?;
        let class = pred.top1()[0];
        let maps = self.feedback(features.view(), flags, &[class]);
        let feedback = maps.index_axis(Axis(0), 0).to_owned();
        let (grid, _) = self.plan.build(feedback.view());
        let warped = resample(image, &grid);
        let (amplified, _) = self.encoder.encode(warped.view().insert_axis(Axis(0)), false)?;
        let pm = pattern_map(amplified.index_axis(Axis(0), 0));
        let reference = locate_reference(&pm);
        Ok(Explanation {
            predicted_class: class,
            feedback,
            grid,
            warped,
            pattern: pm.values,
            reference,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Explanation<T> {
    pub predicted_class: usize,
    pub feedback: Array2<T>,
    pub grid: SamplingGrid<T>,
    pub warped: Array3<T>,
    /// Channel sum of the amplified-pathway features.
    pub pattern: Array2<T>,
    pub reference: Cell,
}

impl<T: Float> Params<T> for Model<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T], &[usize])) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.classifier.visit(&join(prefix, "classifier"), f);
        self.generator.visit(&join(prefix, "generator"), f);
        self.polar_head.visit(&join(prefix, "polar_head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T], &[usize])) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.classifier.visit_mut(&join(prefix, "classifier"), f);
        self.generator.visit_mut(&join(prefix, "generator"), f);
        self.polar_head.visit_mut(&join(prefix, "polar_head"), f);
    }
}

/// Stacks `[C, H, W]` images into a `[B, C, H, W]` batch of another scalar type.
pub fn stack_images<T: Float>(images: &[&Array3<f32>]) -> Array4<T> {
    let (c, h, w) = images.first().map_or((0, 0, 0), |i| i.dim());
    let mut out = Array4::zeros((images.len(), c, h, w));
    for (bi, img) in images.iter().enumerate() {
        out.slice_mut(s![bi, .., .., ..])
            .zip_mut_with(img, |o, &v| *o = T::lit(v as f64));
    }
    out
}
