//! Geometric attribute encoding.
//!
//! The channel sum of the amplified-pathway features `T` gives a pattern map.
//! Its arg-max cell becomes a polar origin; every other cell gets a normalized
//! radius and angle relative to it. A small head predicts those coordinates
//! from the concatenation of the origin's feature vector and the cell's
//! feature vector, and the losses compare predictions with targets over the
//! cells whose activation exceeds the map mean.
//!
//! Grid cells are addressed 0-based as `Cell { x: column, y: row }`; arrays
//! are indexed `[row, column]`.

use std::f64::consts::PI;

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::instrument::{record, OpKind};
use crate::nn::{join, relu2, relu_backward, Linear, Params};
use crate::scalar::Float;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinateMode {
    #[default]
    Polar,
    /// Regress normalized Cartesian offsets instead of polar coordinates.
    Cartesian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleMode {
    /// Mean absolute deviation of the per-cell angle errors from their mean.
    #[default]
    Deviation,
    /// Plain masked mean of the angle errors.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaeConfig {
    /// Hidden width of the polar head.
    pub hidden: usize,
}

impl Default for GaeConfig {
    fn default() -> Self {
        GaeConfig { hidden: 64 }
    }
}

#[derive(Debug, Clone)]
pub struct PatternMap<T> {
    pub values: Array2<T>,
    pub mu: T,
    pub mask: Array2<bool>,
}

/// `M(i,j) = Σ_c T(c,i,j)`, `μ = mean(M)`, `mask = M > μ`.
pub fn pattern_map<T: Float>(features: ArrayView3<T>) -> PatternMap<T> {
    let (c, h, w) = features.dim();
    let mut values = Array2::<T>::zeros((h, w));
    for ci in 0..c {
        values += &features.slice(s![ci, .., ..]);
    }
    let mu = values.sum() / T::from_usize_lossy(h * w);
    let mask = values.mapv(|v| v > mu);
    record(OpKind::PatternMap, (c * h * w + 2 * h * w) as u64);
    PatternMap { values, mu, mask }
}

impl<T: Float> PatternMap<T> {
    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Cells that enter the losses: the above-mean mask (or every cell when
    /// `masked` is off), always excluding the reference whose angle is undefined.
    pub fn loss_mask(&self, reference: Cell, masked: bool) -> Array2<bool> {
        let mut m = if masked {
            self.mask.clone()
        } else {
            Array2::from_elem(self.values.raw_dim(), true)
        };
        m[[reference.y, reference.x]] = false;
        m
    }
}

/// Arg-max of the pattern map; ties resolve to the first cell in row-major order.
pub fn locate_reference<T: Float>(pm: &PatternMap<T>) -> Cell {
    let (_, w) = pm.dim();
    let mut best = 0;
    let flat = pm.values.as_slice().expect("standard layout");
    for (i, &v) in flat.iter().enumerate() {
        if v > flat[best] {
            best = i;
        }
    }
    Cell {
        x: best % w,
        y: best / w,
    }
}

/// Per-cell targets relative to a reference cell.
///
/// In [`CoordinateMode::Polar`] `rho` and `theta` hold the normalized radius
/// and angle. In [`CoordinateMode::Cartesian`] they hold the normalized
/// horizontal and vertical offsets, each mapped into `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarField<T> {
    pub reference: Cell,
    pub rho: Array2<T>,
    pub theta: Array2<T>,
}

/// `ρ = ‖ref − cell‖ / √(W²+H²)`, `θ = (atan2(y_ref − y, x_ref − x) + π) / 2π`.
pub fn polar_targets<T: Float>(reference: Cell, h: usize, w: usize) -> PolarField<T> {
    assert!(reference.x < w && reference.y < h, "reference outside grid");
    let diag = ((w * w + h * h) as f64).sqrt();
    let xs = Array2::from_shape_fn((h, w), |(_, x)| reference.x as f64 - x as f64);
    let ys = Array2::from_shape_fn((h, w), |(y, _)| reference.y as f64 - y as f64);
    let rho = ndarray::Zip::from(&xs)
        .and(&ys)
        .map_collect(|&dx, &dy| T::lit((dx * dx + dy * dy).sqrt() / diag));
    let theta = ndarray::Zip::from(&xs)
        .and(&ys)
        .map_collect(|&dx, &dy| T::lit((dy.atan2(dx) + PI) / (2.0 * PI)));
    PolarField {
        reference,
        rho,
        theta,
    }
}

/// Normalized offsets `((x − x_ref)/W + 1)/2` and `((y − y_ref)/H + 1)/2`.
pub fn cartesian_targets<T: Float>(reference: Cell, h: usize, w: usize) -> PolarField<T> {
    assert!(reference.x < w && reference.y < h, "reference outside grid");
    let rho = Array2::from_shape_fn((h, w), |(_, x)| {
        T::lit(((x as f64 - reference.x as f64) / w as f64 + 1.0) / 2.0)
    });
    let theta = Array2::from_shape_fn((h, w), |(y, _)| {
        T::lit(((y as f64 - reference.y as f64) / h as f64 + 1.0) / 2.0)
    });
    PolarField {
        reference,
        rho,
        theta,
    }
}

pub fn geometry_targets<T: Float>(mode: CoordinateMode, reference: Cell, h: usize, w: usize) -> PolarField<T> {
    match mode {
        CoordinateMode::Polar => polar_targets(reference, h, w),
        CoordinateMode::Cartesian => cartesian_targets(reference, h, w),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarPrediction<T> {
    pub rho_hat: Array2<T>,
    pub theta_hat: Array2<T>,
}

/// `(ρ̂, θ̂) = sigmoid(W₂ · relu(W₁ · [T_H ‖ T_O] + b₁) + b₂)` per cell.
#[derive(Debug, Clone)]
pub struct PolarHead<T> {
    pub hidden: Linear<T>,
    pub output: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct HeadCache<T> {
    input: Array2<T>,
    hidden: Array2<T>,
    out: Array2<T>,
    reference: Cell,
    dims: (usize, usize, usize),
}

impl<T: Float> PolarHead<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, channels: usize, hidden: usize) -> Self {
        PolarHead {
            hidden: Linear::new_rectified(rng, 2 * channels, hidden),
            output: Linear::new(rng, hidden, 2),
        }
    }

    pub fn zeros_like(&self) -> Self {
        PolarHead {
            hidden: self.hidden.zeros_like(),
            output: self.output.zeros_like(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.hidden.inputs()
    }

    pub fn predict(&self, features: ArrayView3<T>, reference: Cell) -> (PolarPrediction<T>, HeadCache<T>) {
        let (c, h, w) = features.dim();
        assert_eq!(2 * c, self.input_width(), "polar head input width");
        let n = h * w;
        let mut input = Array2::<T>::zeros((n, 2 * c));
        let anchor = features.slice(s![.., reference.y, reference.x]);
        for y in 0..h {
            for x in 0..w {
                let r = y * w + x;
                input.slice_mut(s![r, ..c]).assign(&anchor);
                input.slice_mut(s![r, c..]).assign(&features.slice(s![.., y, x]));
            }
        }
        let hidden = relu2(self.hidden.forward(input.view()));
        let out = self.output.forward(hidden.view()).mapv_into(Float::sigmoid);
        record(OpKind::PolarHead, 4 * (n * 2) as u64);
        let rho_hat = Array2::from_shape_fn((h, w), |(y, x)| out[[y * w + x, 0]]);
        let theta_hat = Array2::from_shape_fn((h, w), |(y, x)| out[[y * w + x, 1]]);
        (
            PolarPrediction { rho_hat, theta_hat },
            HeadCache {
                input,
                hidden,
                out,
                reference,
                dims: (c, h, w),
            },
        )
    }

    /// Gradient of the features given gradients of both prediction maps.
    /// The reference vector receives the gradient of every cell's first half.
    pub fn backward(
        &self,
        cache: &HeadCache<T>,
        d_rho: ArrayView2<T>,
        d_theta: ArrayView2<T>,
        grads: &mut PolarHead<T>,
    ) -> Array3<T> {
        let (c, h, w) = cache.dims;
        let n = h * w;
        let mut d_out = Array2::<T>::zeros((n, 2));
        for y in 0..h {
            for x in 0..w {
                let r = y * w + x;
                let (p0, p1) = (cache.out[[r, 0]], cache.out[[r, 1]]);
                d_out[[r, 0]] = d_rho[[y, x]] * p0 * (T::one() - p0);
                d_out[[r, 1]] = d_theta[[y, x]] * p1 * (T::one() - p1);
            }
        }
        let d_hidden = self.output.backward(cache.hidden.view(), d_out.view(), &mut grads.output);
        let d_hidden = relu_backward(&cache.hidden, d_hidden);
        let d_input = self.hidden.backward(cache.input.view(), d_hidden.view(), &mut grads.hidden);

        let mut d_feat = Array3::<T>::zeros((c, h, w));
        let Cell { x: rx, y: ry } = cache.reference;
        for y in 0..h {
            for x in 0..w {
                let r = y * w + x;
                {
                    let mut at = d_feat.slice_mut(s![.., ry, rx]);
                    at += &d_input.slice(s![r, ..c]);
                }
                let mut at = d_feat.slice_mut(s![.., y, x]);
                at += &d_input.slice(s![r, c..]);
            }
        }
        d_feat
    }
}

impl<T: Float> Params<T> for PolarHead<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T], &[usize])) {
        self.hidden.visit(&join(prefix, "hidden"), f);
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T], &[usize])) {
        self.hidden.visit_mut(&join(prefix, "hidden"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

// ---------------------------------------------------------------------------
// Losses

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct GaeLoss<T> {
    pub l_dis: T,
    pub l_ang: T,
    pub l_gae: T,
}

fn masked_count(mask: ArrayView2<bool>) -> usize {
    mask.iter().filter(|&&m| m).count()
}

/// Masked mean of `|pred − target|` and its gradient; zero when the mask is empty.
pub fn masked_l1_grad<T: Float>(
    pred: ArrayView2<T>,
    target: ArrayView2<T>,
    mask: ArrayView2<bool>,
) -> (T, Array2<T>) {
    let n = masked_count(mask);
    let mut grad = Array2::<T>::zeros(pred.raw_dim());
    if n == 0 {
        return (T::zero(), grad);
    }
    let inv = T::one() / T::from_usize_lossy(n);
    let mut total = T::zero();
    ndarray::Zip::from(&mut grad)
        .and(pred)
        .and(target)
        .and(mask)
        .for_each(|g, &p, &t, &m| {
            if m {
                total += (p - t).abs();
                *g = (p - t).sign0() * inv;
            }
        });
    (total * inv, grad)
}

/// `L_ang` and its gradient with respect to the predicted angles.
///
/// With `Δ = |θ̂ − θ|` and `Δ̄` its masked mean, the deviation form returns the
/// masked mean of `|Δ − Δ̄|`; the raw form returns `Δ̄` itself.
pub fn angle_loss_grad<T: Float>(
    pred: ArrayView2<T>,
    target: ArrayView2<T>,
    mask: ArrayView2<bool>,
    mode: AngleMode,
) -> (T, Array2<T>) {
    if mode == AngleMode::Raw {
        return masked_l1_grad(pred, target, mask);
    }
    let n = masked_count(mask);
    let mut grad = Array2::<T>::zeros(pred.raw_dim());
    if n == 0 {
        return (T::zero(), grad);
    }
    let inv = T::one() / T::from_usize_lossy(n);
    let delta = ndarray::Zip::from(pred).and(target).map_collect(|&p, &t| (p - t).abs());
    let mut mean = T::zero();
    ndarray::Zip::from(&delta).and(mask).for_each(|&d, &m| {
        if m {
            mean += d;
        }
    });
    mean = mean * inv;

    let mut loss = T::zero();
    let mut sign_sum = T::zero();
    ndarray::Zip::from(&delta).and(mask).for_each(|&d, &m| {
        if m {
            loss += (d - mean).abs();
            sign_sum += (d - mean).sign0();
        }
    });
    // dL/dΔ_i = (sign(Δ_i − Δ̄) − Σ_j sign(Δ_j − Δ̄)/n) / n
    ndarray::Zip::from(&mut grad)
        .and(&delta)
        .and(pred)
        .and(target)
        .and(mask)
        .for_each(|g, &d, &p, &t, &m| {
            if m {
                let dl_dd = ((d - mean).sign0() - sign_sum * inv) * inv;
                *g = dl_dd * (p - t).sign0();
            }
        });
    (loss * inv, grad)
}

/// Masked mean radial error.
pub fn distance_loss<T: Float>(pred: &PolarPrediction<T>, targets: &PolarField<T>, mask: &Array2<bool>) -> T {
    masked_l1_grad(pred.rho_hat.view(), targets.rho.view(), mask.view()).0
}

/// Mean absolute deviation of the masked angle errors.
pub fn angle_loss<T: Float>(pred: &PolarPrediction<T>, targets: &PolarField<T>, mask: &Array2<bool>) -> T {
    angle_loss_grad(pred.theta_hat.view(), targets.theta.view(), mask.view(), AngleMode::Deviation).0
}

pub fn gae_loss<T: Float>(pred: &PolarPrediction<T>, targets: &PolarField<T>, mask: &Array2<bool>) -> GaeLoss<T> {
    let l_dis = distance_loss(pred, targets, mask);
    let l_ang = angle_loss(pred, targets, mask);
    GaeLoss {
        l_dis,
        l_ang,
        l_gae: l_dis + l_ang,
    }
}

/// Per-image record for debugging the geometric branch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaeDiagnostics {
    pub reference_x: usize,
    pub reference_y: usize,
    pub masked_cells: usize,
    pub mean_abs_rho_error: f64,
    pub mean_theta_error: f64,
}

impl GaeDiagnostics {
    pub fn compute<T: Float>(pred: &PolarPrediction<T>, targets: &PolarField<T>, mask: &Array2<bool>) -> Self {
        let n = masked_count(mask.view());
        let (mut r, mut t) = (0.0, 0.0);
        for ((m, (&rh, &rt)), (&th, &tt)) in mask
            .iter()
            .zip(pred.rho_hat.iter().zip(targets.rho.iter()))
            .zip(pred.theta_hat.iter().zip(targets.theta.iter()))
        {
            if *m {
                r += (rh - rt).abs().to_f64_lossy();
                t += (th - tt).abs().to_f64_lossy();
            }
        }
        let denom = n.max(1) as f64;
        GaeDiagnostics {
            reference_x: targets.reference.x,
            reference_y: targets.reference.y,
            masked_cells: n,
            mean_abs_rho_error: r / denom,
            mean_theta_error: t / denom,
        }
    }

    pub const CSV_HEADER: &'static str = "reference_x,reference_y,masked_cells,mean_abs_rho_error,mean_theta_error";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6}",
            self.reference_x, self.reference_y, self.masked_cells, self.mean_abs_rho_error, self.mean_theta_error
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};

    #[test]
    fn constant_field_has_empty_mask() {
        let t = Array3::<f64>::ones((8, 3, 3));
        let pm = pattern_map(t.view());
        assert!(pm.values.iter().all(|&v| v == 8.0));
        assert!(pm.mask.iter().all(|&m| !m));
        assert_eq!(locate_reference(&pm), Cell { x: 0, y: 0 });
    }

    #[test]
    fn unique_max_is_located() {
        let mut t = Array3::<f64>::zeros((2, 4, 5));
        t[[1, 3, 2]] = 5.0;
        let pm = pattern_map(t.view());
        assert_eq!(locate_reference(&pm), Cell { x: 2, y: 3 });
        assert!(pm.mask[[3, 2]]);
        assert_eq!(pm.mask.iter().filter(|&&m| m).count(), 1);
        let lm = pm.loss_mask(Cell { x: 2, y: 3 }, true);
        assert!(lm.iter().all(|&m| !m));
    }

    #[test]
    fn polar_corner_case() {
        // 1-indexed reference (4,4), cell (1,1)
        let f = polar_targets::<f64>(Cell { x: 3, y: 3 }, 4, 4);
        assert!((f.rho[[0, 0]] - 0.75).abs() < 1e-15);
        assert_eq!(f.rho[[3, 3]], 0.0);
        // directly left of the reference
        assert!((f.theta[[3, 1]] - 0.5).abs() < 1e-15);
        // same column, below in index space
        let f = polar_targets::<f64>(Cell { x: 1, y: 1 }, 4, 4);
        assert!((f.theta[[3, 1]] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn cartesian_targets_are_bounded() {
        let f = cartesian_targets::<f64>(Cell { x: 0, y: 3 }, 4, 4);
        assert!(f.rho.iter().chain(f.theta.iter()).all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(f.rho[[3, 0]], 0.5);
        assert_eq!(f.theta[[3, 0]], 0.5);
    }

    #[test]
    fn losses_on_hand_cases() {
        let targets = PolarField {
            reference: Cell { x: 0, y: 0 },
            rho: array![[0.0, 0.3], [0.4, 0.5]],
            theta: array![[0.5, 0.2], [0.6, 0.7]],
        };
        let mask = array![[false, true], [true, false]];
        let perfect = PolarPrediction {
            rho_hat: targets.rho.clone(),
            theta_hat: targets.theta.clone(),
        };
        assert_eq!(gae_loss(&perfect, &targets, &mask).l_gae, 0.0);

        let shifted = PolarPrediction {
            rho_hat: &targets.rho + 0.1,
            theta_hat: array![[0.5, 0.2], [0.8, 0.7]],
        };
        let l: GaeLoss<f64> = gae_loss(&shifted, &targets, &mask);
        assert!((l.l_dis - 0.1).abs() < 1e-12);
        // Δ = {0, 0.2} → Δ̄ = 0.1 → loss 0.1
        assert!((l.l_ang - 0.1).abs() < 1e-12);
        assert!((l.l_gae - 0.2).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_gives_zero() {
        let targets = polar_targets::<f64>(Cell { x: 0, y: 0 }, 2, 2);
        let pred = PolarPrediction {
            rho_hat: Array2::from_elem((2, 2), 0.9),
            theta_hat: Array2::from_elem((2, 2), 0.9),
        };
        let mask = Array2::from_elem((2, 2), false);
        assert_eq!(gae_loss(&pred, &targets, &mask).l_gae, 0.0);
    }

    #[test]
    fn head_outputs_in_open_interval() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let head = PolarHead::<f64>::new(&mut rng, 6, 16);
        let t = Array3::from_shape_fn((6, 3, 3), |(c, y, x)| ((c * 9 + y * 3 + x) as f64).sin() * 3.0);
        let (p1, _) = head.predict(t.view(), Cell { x: 1, y: 2 });
        let (p2, _) = head.predict(t.view(), Cell { x: 1, y: 2 });
        assert_eq!(p1, p2);
        assert!(p1.rho_hat.iter().chain(p1.theta_hat.iter()).all(|&v| v > 0.0 && v < 1.0));
    }
}
