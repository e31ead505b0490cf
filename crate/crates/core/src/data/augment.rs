use ndarray::{s, Array3, ArrayView3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ImageTensor, LabeledSample};

/// Train-time augmentation. Each transform is toggled independently; with
/// every flag off, [`augment`] returns the input unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub flip: bool,
    pub flip_probability: f64,
    pub crop: bool,
    /// Side of the random crop as a fraction of the image side.
    pub crop_scale: f64,
    pub erase: bool,
    pub erase_probability: f64,
    /// Largest erased rectangle side as a fraction of the image side.
    pub erase_max_fraction: f64,
    pub color_jitter: bool,
    pub brightness: f64,
    pub contrast: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip: true,
            flip_probability: 0.5,
            crop: true,
            crop_scale: 0.875,
            erase: false,
            erase_probability: 0.25,
            erase_max_fraction: 0.25,
            color_jitter: true,
            brightness: 0.1,
            contrast: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            flip: false,
            crop: false,
            erase: false,
            color_jitter: false,
            ..AugmentConfig::default()
        }
    }
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(image: ArrayView3<f32>, out_h: usize, out_w: usize) -> ImageTensor {
    let (c, h, w) = image.dim();
    if (h, w) == (out_h, out_w) {
        return image.to_owned();
    }
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f32)> {
        (0..n_out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, (src - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = axis(h, out_h);
    let xs = axis(w, out_w);
    let mut out = Array3::zeros((c, out_h, out_w));
    for ch in 0..c {
        for (oy, &(y0, y1, ty)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, tx)) in xs.iter().enumerate() {
                let top = image[[ch, y0, x0]] * (1.0 - tx) + image[[ch, y0, x1]] * tx;
                let bottom = image[[ch, y1, x0]] * (1.0 - tx) + image[[ch, y1, x1]] * tx;
                out[[ch, oy, ox]] = top * (1.0 - ty) + bottom * ty;
            }
        }
    }
    out
}

fn crop_side(side: usize, scale: f64) -> usize {
    ((side as f64 * scale).round() as usize).clamp(1, side)
}

/// Center crop at `crop_scale`, resized back to the input size. The test-time
/// counterpart of the random crop.
pub fn center_view(image: ArrayView3<f32>, crop_scale: f64) -> ImageTensor {
    let (_, h, w) = image.dim();
    let (ch, cw) = (crop_side(h, crop_scale), crop_side(w, crop_scale));
    let (y0, x0) = ((h - ch) / 2, (w - cw) / 2);
    resize_bilinear(image.slice(s![.., y0..y0 + ch, x0..x0 + cw]), h, w)
}

pub fn augment<R: Rng + ?Sized>(sample: &LabeledSample, config: &AugmentConfig, rng: &mut R) -> LabeledSample {
    let mut img = sample.image.clone();
    let (c, h, w) = img.dim();

    if config.crop {
        let (ch, cw) = (crop_side(h, config.crop_scale), crop_side(w, config.crop_scale));
        let y0 = rng.gen_range(0..=h - ch);
        let x0 = rng.gen_range(0..=w - cw);
        img = resize_bilinear(img.slice(s![.., y0..y0 + ch, x0..x0 + cw]), h, w);
    }
    if config.flip && rng.gen_bool(config.flip_probability.clamp(0.0, 1.0)) {
        img.invert_axis(ndarray::Axis(2));
        img = img.as_standard_layout().into_owned();
    }
    if config.color_jitter {
        let b = rng.gen_range(-config.brightness..=config.brightness) as f32;
        let k = 1.0 + rng.gen_range(-config.contrast..=config.contrast) as f32;
        for ch in 0..c {
            let mut plane = img.slice_mut(s![ch, .., ..]);
            let mean = plane.mean().unwrap_or(0.0);
            plane.mapv_inplace(|v| ((v - mean) * k + mean + b).clamp(0.0, 1.0));
        }
    }
    if config.erase && rng.gen_bool(config.erase_probability.clamp(0.0, 1.0)) {
        let max_h = crop_side(h, config.erase_max_fraction);
        let max_w = crop_side(w, config.erase_max_fraction);
        let eh = rng.gen_range(1..=max_h);
        let ew = rng.gen_range(1..=max_w);
        let y0 = rng.gen_range(0..=h - eh);
        let x0 = rng.gen_range(0..=w - ew);
        for ch in 0..c {
            let fill: f32 = rng.gen();
            img.slice_mut(s![ch, y0..y0 + eh, x0..x0 + ew]).fill(fill);
        }
    }

    LabeledSample {
        id: sample.id.clone(),
        image: img,
        label: sample.label,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> LabeledSample {
        let image = Array3::from_shape_fn((3, 64, 64), |(c, y, x)| ((c * 7 + y * 3 + x * 5) % 64) as f32 / 63.0);
        LabeledSample {
            id: "s".into(),
            image,
            label: 2,
        }
    }

    #[test]
    fn all_off_is_identity() {
        let s = sample();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(augment(&s, &AugmentConfig::disabled(), &mut rng), s);
    }

    #[test]
    fn forced_flip_twice_is_identity() {
        let s = sample();
        let cfg = AugmentConfig {
            flip: true,
            flip_probability: 1.0,
            ..AugmentConfig::disabled()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let once = augment(&s, &cfg, &mut rng);
        assert_ne!(once.image, s.image);
        assert_eq!(once.image[[0, 5, 0]], s.image[[0, 5, 63]]);
        let twice = augment(&once, &cfg, &mut rng);
        assert_eq!(twice, s);
    }

    #[test]
    fn crop_keeps_shape_and_range() {
        let s = sample();
        let cfg = AugmentConfig {
            crop: true,
            crop_scale: 0.875,
            ..AugmentConfig::disabled()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = augment(&s, &cfg, &mut rng);
        assert_eq!(out.image.dim(), (3, 64, 64));
        assert_eq!(out.label, 2);
        let (lo, hi) = s.image.iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(out.image.iter().all(|&v| v >= lo && v <= hi));
    }

    #[test]
    fn resize_same_size_is_copy() {
        let s = sample();
        assert_eq!(resize_bilinear(s.image.view(), 64, 64), s.image);
        let c = center_view(s.image.view(), 1.0);
        assert_eq!(c, s.image);
    }

    #[test]
    fn full_augmentation_stays_in_unit_range() {
        let s = sample();
        let cfg = AugmentConfig {
            erase: true,
            erase_probability: 1.0,
            ..AugmentConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let out = augment(&s, &cfg, &mut rng);
            assert!(out.image.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
