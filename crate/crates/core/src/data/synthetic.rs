//! Procedural ultra-fine-grained benchmark.
//!
//! Every class is a set of anchor points joined by curved, vein-like strokes.
//! All classes draw their background from one shared pool of noise textures
//! and use the same stroke style, so per-pixel statistics barely differ
//! between classes; what separates them is the geometric layout of the
//! anchors. Instances perturb the anchors by a small jitter and rotate the
//! whole layout by up to ±15°.

use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, DatasetSource, ImageTensor, LabeledSample, Split, MIN_IMAGE_SIDE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub image_size: usize,
    pub seed: u64,
    pub anchors_per_class: usize,
    /// Per-instance anchor jitter, normalized units. Capped per class at a
    /// quarter of the smallest anchor spacing.
    pub jitter: f64,
    pub max_rotation_deg: f64,
    pub texture_pool: usize,
    /// Scale of the background texture around the base color.
    pub texture_amplitude: f64,
    /// Brightness added along stroke centerlines.
    pub stroke_contrast: f64,
    /// Stroke width in pixels at 64 px; scales with image size.
    pub stroke_width: f64,
    pub pixel_noise: f64,
    /// Smallest distance between anchors of one class.
    pub min_anchor_spacing: f64,
    /// Smallest L∞ gap between sorted pairwise-distance signatures of two classes.
    pub min_signature_gap: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_classes: 80,
            per_class_train: 3,
            per_class_test: 3,
            image_size: 64,
            seed: 7,
            anchors_per_class: 6,
            jitter: 0.02,
            max_rotation_deg: 15.0,
            texture_pool: 8,
            texture_amplitude: 1.0,
            stroke_contrast: 0.6,
            stroke_width: 1.4,
            pixel_noise: 0.03,
            min_anchor_spacing: 0.14,
            min_signature_gap: 0.02,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("synthetic data needs at least 2 classes"));
        }
        if self.per_class_train < 1 {
            return Err(Error::config("per_class_train must be at least 1"));
        }
        if self.image_size < MIN_IMAGE_SIDE {
            return Err(Error::config(format!(
                "image_size must be at least {MIN_IMAGE_SIDE}, got {}",
                self.image_size
            )));
        }
        if self.anchors_per_class < 4 {
            return Err(Error::config("anchors_per_class must be at least 4"));
        }
        if self.texture_pool == 0 {
            return Err(Error::config("texture_pool must be positive"));
        }
        if !(self.min_anchor_spacing > 0.0 && self.min_anchor_spacing < 0.5) {
            return Err(Error::config("min_anchor_spacing must be in (0, 0.5)"));
        }
        if self.jitter < 0.0 || self.max_rotation_deg < 0.0 {
            return Err(Error::config("jitter and max_rotation_deg must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticClassSpec {
    pub class_id: usize,
    pub anchor_points: Vec<[f64; 2]>,
    /// Index pairs of anchors joined by a stroke.
    pub edges: Vec<[usize; 2]>,
    /// Perpendicular bend of each stroke, as a fraction of its length.
    pub bends: Vec<f64>,
    pub texture_seed: u64,
    pub jitter_scale: f64,
}

impl SyntheticClassSpec {
    pub fn min_anchor_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.anchor_points.iter().enumerate() {
            for b in &self.anchor_points[i + 1..] {
                best = best.min(dist(*a, *b));
            }
        }
        best
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Sorted pairwise anchor distances: a rotation- and order-invariant
/// fingerprint of a class's layout.
pub fn distance_signature(anchors: &[[f64; 2]]) -> Vec<f64> {
    let mut out = Vec::with_capacity(anchors.len() * (anchors.len() - 1) / 2);
    for (i, a) in anchors.iter().enumerate() {
        for b in &anchors[i + 1..] {
            out.push(dist(*a, *b));
        }
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

fn signature_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn class_specs(cfg: &SyntheticConfig) -> Result<Vec<SyntheticClassSpec>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut specs: Vec<SyntheticClassSpec> = Vec::with_capacity(cfg.num_classes);
    let mut signatures: Vec<Vec<f64>> = Vec::with_capacity(cfg.num_classes);
    let n = cfg.anchors_per_class;
    for class_id in 0..cfg.num_classes {
        let mut attempts = 0;
        let spec = loop {
            attempts += 1;
            if attempts > 10_000 {
                return Err(Error::config(format!(
                    "could not place a separable layout for class {class_id}; relax min_signature_gap or min_anchor_spacing"
                )));
            }
            let mut anchors: Vec<[f64; 2]> = Vec::with_capacity(n);
            let mut tries = 0;
            while anchors.len() < n && tries < 2000 {
                tries += 1;
                let p = [rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85)];
                if anchors.iter().all(|a| dist(*a, p) >= cfg.min_anchor_spacing) {
                    anchors.push(p);
                }
            }
            if anchors.len() < n {
                continue;
            }
            let sig = distance_signature(&anchors);
            if signatures.iter().any(|s| signature_gap(s, &sig) < cfg.min_signature_gap) {
                continue;
            }
            // a path through the anchors in placement order plus one chord
            let mut edges: Vec<[usize; 2]> = (0..n - 1).map(|i| [i, i + 1]).collect();
            let a = rng.gen_range(0..n);
            let mut b = rng.gen_range(0..n);
            while b == a || (a as isize - b as isize).abs() == 1 {
                b = rng.gen_range(0..n);
            }
            edges.push([a.min(b), a.max(b)]);
            let bends = edges.iter().map(|_| rng.gen_range(-0.25..0.25)).collect();
            let spec = SyntheticClassSpec {
                class_id,
                texture_seed: rng.gen(),
                jitter_scale: 0.0,
                anchor_points: anchors,
                edges,
                bends,
            };
            signatures.push(sig);
            break spec;
        };
        let cap = spec.min_anchor_distance() / 4.0;
        let jitter_scale = cfg.jitter.min(cap * 0.99);
        specs.push(SyntheticClassSpec { jitter_scale, ..spec });
    }
    Ok(specs)
}

/// Tileable multi-octave value noise, zero mean, in `[-0.5, 0.5]`.
fn value_noise(seed: u64, size: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field = Array2::<f64>::zeros((size, size));
    let mut amp = 1.0;
    for &cells in &[4usize, 8, 16] {
        let lattice: Vec<f64> = (0..cells * cells).map(|_| rng.gen::<f64>()).collect();
        let at = |i: usize, j: usize| lattice[(i % cells) * cells + (j % cells)];
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        for y in 0..size {
            let fy = y as f64 * cells as f64 / size as f64;
            let (iy, ty) = (fy.floor() as usize, smooth(fy.fract()));
            for x in 0..size {
                let fx = x as f64 * cells as f64 / size as f64;
                let (ix, tx) = (fx.floor() as usize, smooth(fx.fract()));
                let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
                let bottom = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
                field[[y, x]] += amp * (top * (1.0 - ty) + bottom * ty);
            }
        }
        amp *= 0.5;
    }
    // zero mean and unit peak so every pool entry shifts the base color equally
    let mean = field.mean().unwrap_or(0.0);
    let peak = field.iter().fold(0.0f64, |m, &v| m.max((v - mean).abs())).max(1e-12);
    field.mapv_inplace(|v| 0.5 * (v - mean) / peak);
    field
}

fn texture_pool(cfg: &SyntheticConfig) -> Vec<Array2<f64>> {
    (0..cfg.texture_pool)
        .map(|t| value_noise(cfg.seed ^ 0x7e57_u64.wrapping_mul(t as u64 + 1), cfg.image_size))
        .collect()
}

/// Seed for one rendered instance; independent of generation order.
fn instance_seed(seed: u64, class_id: usize, split: Split, index: usize) -> u64 {
    let split_tag = match split {
        Split::Train => 1u64,
        Split::Test => 2u64,
    };
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (class_id as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9)
        ^ split_tag.wrapping_mul(0x94d0_49bb_1331_11eb)
        ^ (index as u64).wrapping_mul(0x2545_f491_4f6c_dd1d)
}

fn bezier(a: [f64; 2], b: [f64; 2], bend: f64, steps: usize) -> Vec<[f64; 2]> {
    let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
    let d = [b[0] - a[0], b[1] - a[1]];
    let ctrl = [mid[0] - d[1] * bend, mid[1] + d[0] * bend];
    (0..=steps)
        .map(|i| {
            let t = i as f64 / steps as f64;
            let u = 1.0 - t;
            [
                u * u * a[0] + 2.0 * u * t * ctrl[0] + t * t * b[0],
                u * u * a[1] + 2.0 * u * t * ctrl[1] + t * t * b[1],
            ]
        })
        .collect()
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * ab[0] - p[0], a[1] + t * ab[1] - p[1]];
    (q[0] * q[0] + q[1] * q[1]).sqrt()
}

const BASE_COLOR: [f64; 3] = [0.30, 0.52, 0.24];
const TEXTURE_GAIN: [f64; 3] = [0.20, 0.28, 0.16];
const VEIN_COLOR: [f64; 3] = [0.85, 0.95, 0.70];
const NODE_COLOR: [f64; 3] = [-0.6, -0.5, -0.7];

fn render_instance(
    cfg: &SyntheticConfig,
    spec: &SyntheticClassSpec,
    textures: &[Array2<f64>],
    split: Split,
    index: usize,
) -> ImageTensor {
    let size = cfg.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(instance_seed(cfg.seed, spec.class_id, split, index));

    let tex = &textures[rng.gen_range(0..textures.len())];
    let (ox, oy) = (rng.gen_range(0..size), rng.gen_range(0..size));

    let angle = rng.gen_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg) * PI / 180.0;
    let (sa, ca) = angle.sin_cos();
    let anchors: Vec<[f64; 2]> = spec
        .anchor_points
        .iter()
        .map(|p| {
            let j = spec.jitter_scale;
            let q = [
                p[0] + rng.gen_range(-j..=j) - 0.5,
                p[1] + rng.gen_range(-j..=j) - 0.5,
            ];
            [ca * q[0] - sa * q[1] + 0.5, sa * q[0] + ca * q[1] + 0.5]
        })
        .collect();

    let scale = size as f64;
    let polylines: Vec<Vec<[f64; 2]>> = spec
        .edges
        .iter()
        .zip(&spec.bends)
        .map(|(e, &bend)| {
            bezier(anchors[e[0]], anchors[e[1]], bend, 24)
                .into_iter()
                .map(|p| [p[0] * scale, p[1] * scale])
                .collect()
        })
        .collect();
    let nodes: Vec<[f64; 2]> = anchors.iter().map(|p| [p[0] * scale, p[1] * scale]).collect();

    let half_width = cfg.stroke_width * scale / 64.0 / 2.0;
    let node_radius = 1.6 * scale / 64.0;
    let mut img = Array3::<f32>::zeros((3, size, size));
    for y in 0..size {
        for x in 0..size {
            let p = [x as f64 + 0.5, y as f64 + 0.5];
            let t = tex[[(y + oy) % size, (x + ox) % size]];
            let mut d = f64::INFINITY;
            for line in &polylines {
                for seg in line.windows(2) {
                    d = d.min(segment_distance(p, seg[0], seg[1]));
                }
            }
            let vein = (half_width + 0.5 - d).clamp(0.0, 1.0);
            let nd = nodes.iter().map(|n| dist(*n, p)).fold(f64::INFINITY, f64::min);
            let node = (node_radius + 0.5 - nd).clamp(0.0, 1.0);
            for c in 0..3 {
                let mut v = BASE_COLOR[c] + cfg.texture_amplitude * TEXTURE_GAIN[c] * t;
                v += cfg.stroke_contrast * vein * (VEIN_COLOR[c] - v);
                v += cfg.stroke_contrast * node * NODE_COLOR[c] * v;
                v += cfg.pixel_noise * (rng.gen::<f64>() - 0.5) * 2.0;
                img[[c, y, x]] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    img
}

/// Generate the benchmark with default rendering parameters.
pub fn generate_synthetic(
    num_classes: usize,
    per_class_train: usize,
    per_class_test: usize,
    image_size: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    generate_synthetic_with(&SyntheticConfig {
        num_classes,
        per_class_train,
        per_class_test,
        image_size,
        seed,
        ..SyntheticConfig::default()
    })
}

pub fn generate_synthetic_with(cfg: &SyntheticConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    let specs = class_specs(cfg)?;
    let textures = texture_pool(cfg);
    let class_names: Vec<String> = (0..cfg.num_classes).map(|k| format!("class_{k:03}")).collect();
    let render_split = |split: Split, per_class: usize| -> Vec<LabeledSample> {
        let mut out = Vec::with_capacity(per_class * specs.len());
        for spec in &specs {
            for i in 0..per_class {
                out.push(LabeledSample {
                    id: format!("{}/{}/{i:03}", split.dir_name(), class_names[spec.class_id]),
                    image: render_instance(cfg, spec, &textures, split, i),
                    label: spec.class_id,
                });
            }
        }
        out
    };
    let train = render_split(Split::Train, cfg.per_class_train);
    let test = render_split(Split::Test, cfg.per_class_test);
    Ok(DatasetManifest {
        class_names,
        image_size: cfg.image_size,
        per_class_train: cfg.per_class_train,
        train,
        test,
        source: DatasetSource::Synthetic {
            config: cfg.clone(),
            class_specs: specs,
        },
    })
}

/// Mean of each channel over all samples of each class: `[class][channel]`.
pub fn class_channel_means(samples: &[LabeledSample], classes: usize) -> Vec<[f64; 3]> {
    let mut sums = vec![[0.0f64; 3]; classes];
    let mut counts = vec![0usize; classes];
    for s in samples {
        for c in 0..3.min(s.image.shape()[0]) {
            let plane = s.image.index_axis(ndarray::Axis(0), c);
            sums[s.label][c] += plane.iter().map(|&v| v as f64).sum::<f64>() / plane.len() as f64;
        }
        counts[s.label] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &n)| {
            let n = n.max(1) as f64;
            [s[0] / n, s[1] / n, s[2] / n]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_case() {
        let m = generate_synthetic(2, 1, 1, 32, 0).unwrap();
        assert_eq!(m.train.len(), 2);
        assert_eq!(m.test.len(), 2);
        let mut labels: Vec<usize> = m.train.iter().map(|s| s.label).collect();
        labels.sort();
        assert_eq!(labels, vec![0, 1]);
        assert!(m.train.iter().all(|s| s.image.shape() == [3, 32, 32]));
    }

    #[test]
    fn invalid_counts_rejected() {
        assert!(matches!(generate_synthetic(1, 1, 1, 32, 0), Err(Error::Config(_))));
        assert!(matches!(generate_synthetic(2, 0, 1, 32, 0), Err(Error::Config(_))));
        assert!(matches!(generate_synthetic(2, 1, 1, 16, 0), Err(Error::Config(_))));
    }

    #[test]
    fn deterministic_for_seed() {
        let a = generate_synthetic(3, 2, 1, 32, 7).unwrap();
        let b = generate_synthetic(3, 2, 1, 32, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(3, 2, 1, 32, 8).unwrap();
        assert_ne!(a.train[0].image, c.train[0].image);
    }

    #[test]
    fn specs_respect_invariants() {
        let m = generate_synthetic(20, 1, 1, 32, 3).unwrap();
        let DatasetSource::Synthetic { class_specs, config } = &m.source else {
            panic!("synthetic source");
        };
        for s in class_specs {
            assert!(s.anchor_points.len() >= 4);
            assert!(s.anchor_points.iter().all(|p| (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1])));
            assert!(s.jitter_scale < s.min_anchor_distance() / 4.0);
        }
        for (i, a) in class_specs.iter().enumerate() {
            for b in &class_specs[i + 1..] {
                let gap = signature_gap(&distance_signature(&a.anchor_points), &distance_signature(&b.anchor_points));
                assert!(gap >= config.min_signature_gap);
            }
        }
    }

    #[test]
    fn values_in_unit_interval() {
        let m = generate_synthetic(2, 2, 0, 48, 1).unwrap();
        assert!(m.train.iter().all(|s| s.image.iter().all(|&v| (0.0..=1.0).contains(&v))));
    }
}
