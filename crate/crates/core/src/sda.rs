//! Saliency-guided detail amplification.
//!
//! A 1×1 convolution with a sigmoid turns backbone features into a feedback
//! map `D ∈ (0,1)^{H×W}`. The map drives a non-uniform sampling grid: every
//! output location pulls its source coordinate toward the kernel-weighted
//! centroid of `D`, so salient regions receive more output pixels. The image
//! is then resampled bilinearly through that grid.
//!
//! Every linear stage of the grid construction (resizing `D`, the separable
//! Gaussian sums, and upsampling the coarse grid) is a fixed matrix, so the
//! forward pass is a handful of small matrix products and the backward pass
//! is their transposes.

use ndarray::{s, Array2, Array3, Array4, ArrayView1, ArrayView2, ArrayView3, ArrayView4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instrument::{record, OpKind};
use crate::nn::{Linear, Params};
use crate::scalar::Float;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdaConfig {
    /// Gaussian kernel width in normalized image coordinates.
    pub sigma: f64,
    /// Side of the coarse grid on which the mapping is evaluated.
    pub grid_side: usize,
}

impl Default for SdaConfig {
    fn default() -> Self {
        SdaConfig {
            sigma: 0.25,
            grid_side: 31,
        }
    }
}

impl SdaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config(format!("sda.sigma must be positive, got {}", self.sigma)));
        }
        if self.grid_side < 8 {
            return Err(Error::config(format!(
                "sda.grid_side must be at least 8, got {}",
                self.grid_side
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Feedback generator

/// `D = sigmoid(conv1x1(F))`. Starts at zero so a fresh model has `D ≡ 0.5`
/// and an identity warp.
#[derive(Debug, Clone)]
pub struct FeedbackGenerator<T> {
    pub proj: Linear<T>,
}

impl<T: Float> FeedbackGenerator<T> {
    pub fn new(channels: usize) -> Self {
        FeedbackGenerator {
            proj: Linear::zeros(channels, 1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        FeedbackGenerator {
            proj: self.proj.zeros_like(),
        }
    }

    /// `features: [B, C, H, W] -> D: [B, H, W]`.
    pub fn generate(&self, features: ArrayView4<T>) -> Array3<T> {
        let [b, c, h, w] = dims4(&features);
        let bias = self.proj.bias[0];
        let mut d = Array3::<T>::from_elem((b, h, w), bias);
        for bi in 0..b {
            for ci in 0..c {
                let wc = self.proj.weight[[0, ci]];
                if wc == T::zero() {
                    continue;
                }
                let plane = features.slice(s![bi, ci, .., ..]);
                let mut out = d.slice_mut(s![bi, .., ..]);
                out.zip_mut_with(&plane, |o, &f| *o += wc * f);
            }
        }
        d.mapv_inplace(Float::sigmoid);
        record(OpKind::Feedback, (2 * b * c * h * w + 4 * b * h * w) as u64);
        d
    }

    /// Backpropagates `d_map` through the sigmoid and projection.
    pub fn backward(
        &self,
        features: ArrayView4<T>,
        map: ArrayView3<T>,
        d_map: ArrayView3<T>,
        grads: &mut FeedbackGenerator<T>,
    ) -> Array4<T> {
        let [b, c, h, w] = dims4(&features);
        let mut pre = Array3::<T>::zeros((b, h, w));
        ndarray::Zip::from(&mut pre)
            .and(&map)
            .and(&d_map)
            .for_each(|p, &m, &g| *p = g * m * (T::one() - m));
        grads.proj.bias[0] += pre.sum();
        let mut dx = Array4::<T>::zeros((b, c, h, w));
        for bi in 0..b {
            let pb = pre.slice(s![bi, .., ..]);
            for ci in 0..c {
                let plane = features.slice(s![bi, ci, .., ..]);
                let mut acc = T::zero();
                ndarray::Zip::from(&plane).and(&pb).for_each(|&f, &p| acc += f * p);
                grads.proj.weight[[0, ci]] += acc;
                let wc = self.proj.weight[[0, ci]];
                dx.slice_mut(s![bi, ci, .., ..]).assign(&pb.mapv(|p| p * wc));
            }
        }
        dx
    }
}

impl<T: Float> Params<T> for FeedbackGenerator<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T], &[usize])) {
        self.proj.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T], &[usize])) {
        self.proj.visit_mut(prefix, f);
    }
}

/// Class-activation feedback: the classifier-weighted channel sum of `F`,
/// standardized and squashed into (0,1).
pub fn cam_feedback<T: Float>(features: ArrayView3<T>, class_weights: ArrayView1<T>) -> Array2<T> {
    let (c, h, w) = features.dim();
    let mut cam = Array2::<T>::zeros((h, w));
    for ci in 0..c {
        let wc = class_weights[ci];
        cam.zip_mut_with(&features.slice(s![ci, .., ..]), |o, &f| *o += wc * f);
    }
    let n = T::from_usize_lossy(h * w);
    let mean = cam.sum() / n;
    let var = cam.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
    let scale = T::one() / (var.sqrt() + T::lit(1e-6));
    record(OpKind::Feedback, (2 * c * h * w + 6 * h * w) as u64);
    cam.mapv(|v| ((v - mean) * scale).sigmoid())
}

/// Mean activation of the feedback map.
pub fn regularization_loss<T: Float>(map: ArrayView2<T>) -> T {
    map.sum() / T::from_usize_lossy(map.len().max(1))
}

/// Mean over a batch of maps `[B, H, W]`; every map has the same size, so
/// this is also the mean of the per-image losses.
pub fn regularization_loss_batch<T: Float>(maps: ArrayView3<T>) -> T {
    maps.sum() / T::from_usize_lossy(maps.len().max(1))
}

// ---------------------------------------------------------------------------
// Sampling grid

/// Per-output-pixel source coordinates in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingGrid<T> {
    pub map_x: Array2<T>,
    pub map_y: Array2<T>,
    pub kernel_sigma: f64,
    pub grid_side: usize,
}

impl<T: Float> SamplingGrid<T> {
    /// `map(x) = x / (W−1)` along each axis.
    pub fn identity(height: usize, width: usize) -> Self {
        let fx = step(width);
        let fy = step(height);
        SamplingGrid {
            map_x: Array2::from_shape_fn((height, width), |(_, x)| T::from_usize_lossy(x) * fx),
            map_y: Array2::from_shape_fn((height, width), |(y, _)| T::from_usize_lossy(y) * fy),
            kernel_sigma: 0.0,
            grid_side: 0,
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.map_x.dim()
    }

    /// Largest displacement from the identity grid, in output pixels.
    pub fn max_displacement_px(&self) -> f64 {
        let (h, w) = self.dim();
        let id = SamplingGrid::<T>::identity(h, w);
        let sx = (w.max(2) - 1) as f64;
        let sy = (h.max(2) - 1) as f64;
        let mut worst = 0.0f64;
        for ((&mx, &my), (&ix, &iy)) in self
            .map_x
            .iter()
            .zip(self.map_y.iter())
            .zip(id.map_x.iter().zip(id.map_y.iter()))
        {
            let dx = (mx - ix).to_f64_lossy() * sx;
            let dy = (my - iy).to_f64_lossy() * sy;
            worst = worst.max((dx * dx + dy * dy).sqrt());
        }
        worst
    }
}

fn step<T: Float>(n: usize) -> T {
    if n > 1 {
        T::one() / T::from_usize_lossy(n - 1)
    } else {
        T::zero()
    }
}

/// Bilinear interpolation matrix `[dst, src]` sampling `src` cells at the
/// normalized positions `coords` (clamped to `[0,1]`, corners aligned).
fn interp_matrix<T: Float>(coords: &[f64], src: usize) -> Array2<T> {
    let mut m = Array2::<T>::zeros((coords.len(), src));
    for (i, &u) in coords.iter().enumerate() {
        if src == 1 {
            m[[i, 0]] = T::one();
            continue;
        }
        let pos = u.clamp(0.0, 1.0) * (src - 1) as f64;
        let i0 = (pos.floor() as usize).min(src - 2);
        let f = pos - i0 as f64;
        m[[i, i0]] = T::lit(1.0 - f);
        m[[i, i0 + 1]] += T::lit(f);
    }
    m
}

/// Precomputed linear operators for one (feature size, output size, σ, G) combination.
#[derive(Debug, Clone)]
pub struct GridPlan<T> {
    sigma: f64,
    grid_side: usize,
    radius: usize,
    out_hw: (usize, usize),
    feature_hw: (usize, usize),
    /// `[E, H]`, `[E, W]`: replicate-padded bilinear resize of `D` to the extended lattice.
    resize_y: Array2<T>,
    resize_x: Array2<T>,
    /// `[G, E]`: truncated Gaussian weights and the same weights times the source coordinate.
    kernel: Array2<T>,
    kernel_coord: Array2<T>,
    /// `[H_out, G]`, `[W_out, G]`: coarse-to-output bilinear upsampling.
    up_y: Array2<T>,
    up_x: Array2<T>,
}

/// Intermediate values of [`GridPlan::build`] needed by the backward pass.
#[derive(Debug, Clone)]
pub struct GridCache<T> {
    denom: Array2<T>,
    coarse_x: Array2<T>,
    coarse_y: Array2<T>,
    raw_x: Array2<T>,
    raw_y: Array2<T>,
}

impl<T: Float> GridPlan<T> {
    /// The kernel is a Gaussian `exp(−d²/2σ²)` over normalized coordinates,
    /// truncated to `r = ⌈3σ·G⌉` lattice cells on each side. The lattice is
    /// extended by `r` cells of replicate padding, so every coarse cell sees a
    /// full symmetric window and a uniform map yields the identity exactly.
    pub fn new(
        feature_hw: (usize, usize),
        out_hw: (usize, usize),
        sigma: f64,
        grid_side: usize,
    ) -> Result<Self> {
        SdaConfig { sigma, grid_side }.validate()?;
        if feature_hw.0 == 0 || feature_hw.1 == 0 || out_hw.0 < 2 || out_hw.1 < 2 {
            return Err(Error::config("grid plan needs non-empty feature and output sizes"));
        }
        let g = grid_side;
        let spacing = 1.0 / (g - 1) as f64;
        let radius = (3.0 * sigma * g as f64).ceil() as usize;
        let ext = g + 2 * radius;
        let src: Vec<f64> = (0..ext)
            .map(|k| (k as f64 - radius as f64) * spacing)
            .collect();

        let mut kernel = Array2::<T>::zeros((g, ext));
        let mut kernel_coord = Array2::<T>::zeros((g, ext));
        let denom = 2.0 * sigma * sigma;
        for i in 0..g {
            let u = i as f64 * spacing;
            // window [i, i + 2r] in extended indices is centered on cell i
            for k in i..=i + 2 * radius {
                let d = u - src[k];
                let kv = (-d * d / denom).exp();
                kernel[[i, k]] = T::lit(kv);
                kernel_coord[[i, k]] = T::lit(kv * src[k]);
            }
        }

        let up = |n: usize| -> Array2<T> {
            let coords: Vec<f64> = (0..n).map(|p| p as f64 / (n - 1) as f64).collect();
            interp_matrix(&coords, g)
        };

        Ok(GridPlan {
            sigma,
            grid_side,
            radius,
            out_hw,
            feature_hw,
            resize_y: interp_matrix(&src, feature_hw.0),
            resize_x: interp_matrix(&src, feature_hw.1),
            kernel,
            kernel_coord,
            up_y: up(out_hw.0),
            up_x: up(out_hw.1),
        })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn out_hw(&self) -> (usize, usize) {
        self.out_hw
    }

    fn flops(&self) -> u64 {
        let (g, e) = self.kernel.dim();
        let (h, w) = self.feature_hw;
        let (ho, wo) = self.out_hw;
        (2 * (e * h * w + e * e * w) + 6 * (g * e * e + g * g * e) + 4 * (ho * g * g + ho * wo * g)) as u64
    }

    /// Maps a feedback map `[H, W]` to a sampling grid at output resolution.
    pub fn build(&self, map: ArrayView2<T>) -> (SamplingGrid<T>, GridCache<T>) {
        assert_eq!(map.dim(), self.feature_hw, "feedback map size");
        let extended = self.resize_y.dot(&map).dot(&self.resize_x.t());
        let ky_d = self.kernel.dot(&extended);
        let denom = ky_d.dot(&self.kernel.t());
        let num_x = ky_d.dot(&self.kernel_coord.t());
        let num_y = self.kernel_coord.dot(&extended).dot(&self.kernel.t());
        let coarse_x = &num_x / &denom;
        let coarse_y = &num_y / &denom;
        let raw_x = self.up_y.dot(&coarse_x).dot(&self.up_x.t());
        let raw_y = self.up_y.dot(&coarse_y).dot(&self.up_x.t());
        let clamp = |v: T| v.max(T::zero()).min(T::one());
        let grid = SamplingGrid {
            map_x: raw_x.mapv(clamp),
            map_y: raw_y.mapv(clamp),
            kernel_sigma: self.sigma,
            grid_side: self.grid_side,
        };
        record(OpKind::SamplingGrid, self.flops());
        (
            grid,
            GridCache {
                denom,
                coarse_x,
                coarse_y,
                raw_x,
                raw_y,
            },
        )
    }

    /// Gradient of the feedback map given gradients of both coordinate maps.
    pub fn backward(&self, cache: &GridCache<T>, d_map_x: ArrayView2<T>, d_map_y: ArrayView2<T>) -> Array2<T> {
        let inside = |raw: &Array2<T>, d: ArrayView2<T>| -> Array2<T> {
            let mut out = d.to_owned();
            ndarray::Zip::from(&mut out).and(raw).for_each(|o, &r| {
                if r < T::zero() || r > T::one() {
                    *o = T::zero();
                }
            });
            out
        };
        let dx_full = inside(&cache.raw_x, d_map_x);
        let dy_full = inside(&cache.raw_y, d_map_y);
        let dcx = self.up_y.t().dot(&dx_full).dot(&self.up_x);
        let dcy = self.up_y.t().dot(&dy_full).dot(&self.up_x);

        let d_num_x = &dcx / &cache.denom;
        let d_num_y = &dcy / &cache.denom;
        let d_denom = -(&(&dcx * &cache.coarse_x) + &(&dcy * &cache.coarse_y)) / &cache.denom;

        let kt = self.kernel.t();
        let d_ext = kt.dot(&d_denom).dot(&self.kernel)
            + kt.dot(&d_num_x).dot(&self.kernel_coord)
            + self.kernel_coord.t().dot(&d_num_y).dot(&self.kernel);
        self.resize_y.t().dot(&d_ext).dot(&self.resize_x)
    }
}

/// One-shot grid construction for a single map.
pub fn build_grid<T: Float>(
    map: ArrayView2<T>,
    out_size: (usize, usize),
    sigma: f64,
    grid_side: usize,
) -> Result<SamplingGrid<T>> {
    let plan = GridPlan::new(map.dim(), out_size, sigma, grid_side)?;
    Ok(plan.build(map).0)
}

// ---------------------------------------------------------------------------
// Bilinear resampling

struct Tap<T> {
    x0: usize,
    y0: usize,
    fx: T,
    fy: T,
}

#[inline]
fn tap<T: Float>(mx: T, my: T, h: usize, w: usize) -> Tap<T> {
    let locate = |u: T, n: usize| -> (usize, T) {
        let mut pos = u * T::from_usize_lossy(n - 1);
        // snap rounding noise so that lattice points sample exactly one pixel
        let nearest = pos.round();
        if (pos - nearest).abs() <= T::epsilon() * T::from_usize_lossy(4 * n) {
            pos = nearest;
        }
        let i0 = pos.floor().to_f64_lossy().max(0.0) as usize;
        let i0 = i0.min(n - 2);
        (i0, pos - T::from_usize_lossy(i0))
    };
    let (x0, fx) = locate(mx, w);
    let (y0, fy) = locate(my, h);
    Tap { x0, y0, fx, fy }
}

/// `I_D(x,y) = Σ W_D · I(i,j)` over the four neighbors of `(M_x, M_y)`.
pub fn resample<T: Float>(image: ArrayView3<T>, grid: &SamplingGrid<T>) -> Array3<T> {
    let (c, h, w) = image.dim();
    let (ho, wo) = grid.dim();
    assert!(h >= 2 && w >= 2, "resample needs at least 2x2 input");
    let mut out = Array3::<T>::zeros((c, ho, wo));
    for y in 0..ho {
        for x in 0..wo {
            let t = tap(grid.map_x[[y, x]], grid.map_y[[y, x]], h, w);
            let (ax, ay) = (T::one() - t.fx, T::one() - t.fy);
            for ci in 0..c {
                let v00 = image[[ci, t.y0, t.x0]];
                let v01 = image[[ci, t.y0, t.x0 + 1]];
                let v10 = image[[ci, t.y0 + 1, t.x0]];
                let v11 = image[[ci, t.y0 + 1, t.x0 + 1]];
                out[[ci, y, x]] = ay * (ax * v00 + t.fx * v01) + t.fy * (ax * v10 + t.fx * v11);
            }
        }
    }
    record(OpKind::Resample, (11 * c * ho * wo) as u64);
    out
}

/// Gradients of [`resample`] with respect to the image and both coordinate maps.
pub fn resample_backward<T: Float>(
    image: ArrayView3<T>,
    grid: &SamplingGrid<T>,
    d_out: ArrayView3<T>,
    need_image: bool,
) -> (Option<Array3<T>>, Array2<T>, Array2<T>) {
    let (c, h, w) = image.dim();
    let (ho, wo) = grid.dim();
    let mut d_img = need_image.then(|| Array3::<T>::zeros((c, h, w)));
    let mut dmx = Array2::<T>::zeros((ho, wo));
    let mut dmy = Array2::<T>::zeros((ho, wo));
    let sx = T::from_usize_lossy(w - 1);
    let sy = T::from_usize_lossy(h - 1);
    for y in 0..ho {
        for x in 0..wo {
            let t = tap(grid.map_x[[y, x]], grid.map_y[[y, x]], h, w);
            let (ax, ay) = (T::one() - t.fx, T::one() - t.fy);
            let (mut gx, mut gy) = (T::zero(), T::zero());
            for ci in 0..c {
                let g = d_out[[ci, y, x]];
                if g == T::zero() {
                    continue;
                }
                let v00 = image[[ci, t.y0, t.x0]];
                let v01 = image[[ci, t.y0, t.x0 + 1]];
                let v10 = image[[ci, t.y0 + 1, t.x0]];
                let v11 = image[[ci, t.y0 + 1, t.x0 + 1]];
                gx += g * (ay * (v01 - v00) + t.fy * (v11 - v10));
                gy += g * (ax * (v10 - v00) + t.fx * (v11 - v01));
                if let Some(di) = d_img.as_mut() {
                    di[[ci, t.y0, t.x0]] += g * ay * ax;
                    di[[ci, t.y0, t.x0 + 1]] += g * ay * t.fx;
                    di[[ci, t.y0 + 1, t.x0]] += g * t.fy * ax;
                    di[[ci, t.y0 + 1, t.x0 + 1]] += g * t.fy * t.fx;
                }
            }
            dmx[[y, x]] = gx * sx;
            dmy[[y, x]] = gy * sy;
        }
    }
    (d_img, dmx, dmy)
}

fn dims4<T>(a: &ArrayView4<T>) -> [usize; 4] {
    let s = a.shape();
    [s[0], s[1], s[2], s[3]]
}

/// Intermediate state of amplifying one batch, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Amplified<T> {
    pub maps: Array3<T>,
    pub grids: Vec<SamplingGrid<T>>,
    pub caches: Vec<GridCache<T>>,
    pub warped: Array4<T>,
}

/// Builds grids from a batch of maps and warps a batch of images through them.
pub fn amplify_batch<T: Float>(plan: &GridPlan<T>, images: ArrayView4<T>, maps: Array3<T>) -> Amplified<T> {
    let b = images.shape()[0];
    let mut grids = Vec::with_capacity(b);
    let mut caches = Vec::with_capacity(b);
    let mut warped = Array4::<T>::zeros(images.raw_dim());
    for bi in 0..b {
        let (grid, cache) = plan.build(maps.slice(s![bi, .., ..]));
        let out = resample(images.slice(s![bi, .., .., ..]), &grid);
        warped.slice_mut(s![bi, .., .., ..]).assign(&out);
        grids.push(grid);
        caches.push(cache);
    }
    Amplified {
        maps,
        grids,
        caches,
        warped,
    }
}

/// Gradient of the feedback maps given the gradient of the warped batch.
pub fn amplify_backward<T: Float>(
    plan: &GridPlan<T>,
    images: ArrayView4<T>,
    amp: &Amplified<T>,
    d_warped: ArrayView4<T>,
) -> Array3<T> {
    let b = images.shape()[0];
    let mut d_maps = Array3::<T>::zeros(amp.maps.raw_dim());
    for bi in 0..b {
        let (_, dmx, dmy) = resample_backward(
            images.slice(s![bi, .., .., ..]),
            &amp.grids[bi],
            d_warped.slice(s![bi, .., .., ..]),
            false,
        );
        let dd = plan.backward(&amp.caches[bi], dmx.view(), dmy.view());
        d_maps.slice_mut(s![bi, .., ..]).assign(&dd);
    }
    d_maps
}

/// Identity-layout helper for tests and visualization: `[H, W]` filled with `v`.
pub fn constant_map<T: Float>(h: usize, w: usize, v: T) -> Array2<T> {
    Array2::from_elem((h, w), v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn zero_generator_gives_half() {
        let gen = FeedbackGenerator::<f64>::new(8);
        let f = Array4::from_shape_fn((2, 8, 4, 4), |(b, c, i, j)| (b + c + i + j) as f64);
        let d = gen.generate(f.view());
        assert!(d.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn feedback_stays_open_interval() {
        let mut gen = FeedbackGenerator::<f64>::new(2);
        gen.proj.weight[[0, 0]] = 3.0;
        gen.proj.weight[[0, 1]] = -2.0;
        let f = Array4::from_shape_fn((1, 2, 3, 3), |(_, c, i, j)| (c * 9 + i * 3 + j) as f64 * 0.7);
        let d = gen.generate(f.view());
        assert!(d.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn regularizer_is_mean() {
        assert_eq!(regularization_loss(constant_map(4, 4, 1.0f64).view()), 1.0);
        assert_eq!(regularization_loss(constant_map(4, 4, 0.5f64).view()), 0.5);
    }

    #[test]
    fn invalid_sigma_rejected() {
        let d = constant_map(4, 4, 0.5f64);
        assert!(matches!(build_grid(d.view(), (32, 32), 0.0, 31), Err(Error::Config(_))));
        assert!(matches!(build_grid(d.view(), (32, 32), -1.0, 31), Err(Error::Config(_))));
        assert!(matches!(build_grid(d.view(), (32, 32), 0.25, 4), Err(Error::Config(_))));
    }

    #[test]
    fn uniform_map_is_identity() {
        let d = constant_map(4, 4, 0.5f64);
        let g = build_grid(d.view(), (64, 64), 0.25, 31).unwrap();
        let id = SamplingGrid::<f64>::identity(64, 64);
        for (a, b) in g.map_x.iter().zip(id.map_x.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        for (a, b) in g.map_y.iter().zip(id.map_y.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn scaling_map_leaves_grid_unchanged() {
        let d = Array2::from_shape_fn((4, 4), |(i, j)| 0.1 + 0.05 * (i * 4 + j) as f64);
        let g1 = build_grid(d.view(), (32, 32), 0.2, 16).unwrap();
        let g2 = build_grid((&d * 2.0).view(), (32, 32), 0.2, 16).unwrap();
        for (a, b) in g1.map_x.iter().zip(g2.map_x.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_grid_reproduces_image() {
        let img = Array3::from_shape_fn((3, 32, 32), |(c, i, j)| ((c * 31 + i * 7 + j * 13) % 17) as f64 / 17.0);
        let out = resample(img.view(), &SamplingGrid::identity(32, 32));
        for (a, b) in out.iter().zip(img.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_image_is_invariant() {
        let img = Array3::from_elem((2, 16, 16), 0.37f64);
        let mut grid = SamplingGrid::identity(16, 16);
        grid.map_x.mapv_inplace(|v: f64| (v * v * 0.9 + 0.03).min(1.0));
        grid.map_y.mapv_inplace(|v| 1.0 - v);
        let out = resample(img.view(), &grid);
        assert!(out.iter().all(|&v| (v - 0.37).abs() < 1e-15));
    }
}
