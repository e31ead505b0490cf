//! Layers with explicit forward caches and hand-written backward passes.
//!
//! A layer's forward pass borrows it immutably and returns a cache, so one
//! weight set can serve several pathways in the same step. Gradients live in a
//! zeroed clone of the layer (`zeros_like`), which keeps parameter naming and
//! shapes in one place.

use ndarray::{s, Array1, Array2, Array4, ArrayView2, ArrayView4, Axis};
use rand::Rng;

use crate::instrument::{record, OpKind};
use crate::scalar::Float;

/// Walks named parameter tensors in a fixed order.
pub trait Params<T: Float> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T], &[usize]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T], &[usize]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, v, _| n += v.len());
        n
    }

    fn fill_zero(&mut self) {
        self.visit_mut("", &mut |_, v, _| v.iter_mut().for_each(|x| *x = T::zero()));
    }

    /// Flatten every parameter into one vector, in visiting order.
    fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit("", &mut |_, v, _| out.extend_from_slice(v));
        out
    }

    /// Overwrite parameters from a flat vector produced by [`Params::flatten`].
    fn unflatten(&mut self, flat: &[T]) {
        let mut at = 0;
        self.visit_mut("", &mut |_, v, _| {
            v.copy_from_slice(&flat[at..at + v.len()]);
            at += v.len();
        });
        assert_eq!(at, flat.len(), "parameter count mismatch");
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn slice_mut<T, D: ndarray::Dimension>(a: &mut ndarray::Array<T, D>) -> &mut [T] {
    a.as_slice_mut().expect("parameters are contiguous")
}

fn slice<T, D: ndarray::Dimension>(a: &ndarray::Array<T, D>) -> &[T] {
    a.as_slice().expect("parameters are contiguous")
}

fn uniform<T: Float, R: Rng + ?Sized>(rng: &mut R, n: usize, bound: f64) -> Vec<T> {
    (0..n)
        .map(|_| T::lit(rng.gen_range(-bound..bound)))
        .collect()
}

// ---------------------------------------------------------------------------
// Convolution

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    /// `[out, in, k, k]`
    pub weight: Array4<T>,
    pub bias: Array1<T>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    cols: Array2<T>,
    in_shape: [usize; 4],
    out_hw: (usize, usize),
}

impl<T: Float> Conv2d<T> {
    /// He-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let bound = (6.0 / fan_in as f64).sqrt();
        let w = uniform(rng, out_ch * fan_in, bound);
        Conv2d {
            weight: Array4::from_shape_vec((out_ch, in_ch, kernel, kernel), w).unwrap(),
            bias: Array1::zeros(out_ch),
            stride,
            padding,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Conv2d {
            weight: Array4::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
            stride: self.stride,
            padding: self.padding,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel();
        (
            (h + 2 * self.padding - k) / self.stride + 1,
            (w + 2 * self.padding - k) / self.stride + 1,
        )
    }

    fn weight_matrix(&self) -> ArrayView2<'_, T> {
        let (o, rest) = (self.out_channels(), self.weight.len() / self.out_channels());
        self.weight.view().into_shape_with_order((o, rest)).unwrap()
    }

    pub fn forward(&self, x: ArrayView4<T>) -> (Array4<T>, ConvCache<T>) {
        let x = x.as_standard_layout();
        let [b, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        assert_eq!(c, self.in_channels(), "conv input channels");
        let k = self.kernel();
        let (ho, wo) = self.output_hw(h, w);
        let hw_out = ho * wo;
        let ncols = b * hw_out;
        let rows = c * k * k;

        let mut cols = Array2::<T>::zeros((rows, ncols));
        {
            let xs = x.as_slice().unwrap();
            let cs = cols.as_slice_mut().unwrap();
            let (stride, pad) = (self.stride as isize, self.padding as isize);
            for ci in 0..c {
                for ki in 0..k {
                    for kj in 0..k {
                        let row = (ci * k + ki) * k + kj;
                        let out_row = &mut cs[row * ncols..(row + 1) * ncols];
                        for bi in 0..b {
                            let plane = &xs[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                            for oy in 0..ho {
                                let iy = oy as isize * stride + ki as isize - pad;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                                let dst = &mut out_row[bi * hw_out + oy * wo..bi * hw_out + (oy + 1) * wo];
                                for (ox, d) in dst.iter_mut().enumerate() {
                                    let ix = ox as isize * stride + kj as isize - pad;
                                    if ix >= 0 && ix < w as isize {
                                        *d = src[ix as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }

        let o = self.out_channels();
        let y2 = self.weight_matrix().dot(&cols);
        record(OpKind::Conv, 2 * (o * rows * ncols) as u64);

        let mut y = Array4::<T>::zeros((b, o, ho, wo));
        {
            let ys = y.as_slice_mut().unwrap();
            let y2s = y2.as_slice().unwrap();
            for oc in 0..o {
                let bias = self.bias[oc];
                for bi in 0..b {
                    let src = &y2s[oc * ncols + bi * hw_out..oc * ncols + (bi + 1) * hw_out];
                    let dst = &mut ys[(bi * o + oc) * hw_out..(bi * o + oc + 1) * hw_out];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = s + bias;
                    }
                }
            }
        }
        (
            y,
            ConvCache {
                cols,
                in_shape: [b, c, h, w],
                out_hw: (ho, wo),
            },
        )
    }

    /// Accumulates parameter gradients into `grads`; returns the input
    /// gradient when `need_input` is set.
    pub fn backward(
        &self,
        cache: &ConvCache<T>,
        dy: ArrayView4<T>,
        grads: &mut Conv2d<T>,
        need_input: bool,
    ) -> Option<Array4<T>> {
        let dy = dy.as_standard_layout();
        let [b, c, h, w] = cache.in_shape;
        let (ho, wo) = cache.out_hw;
        let hw_out = ho * wo;
        let ncols = b * hw_out;
        let o = self.out_channels();
        let k = self.kernel();

        let mut dy2 = Array2::<T>::zeros((o, ncols));
        {
            let d2 = dy2.as_slice_mut().unwrap();
            let ds = dy.as_slice().unwrap();
            for oc in 0..o {
                for bi in 0..b {
                    let src = &ds[(bi * o + oc) * hw_out..(bi * o + oc + 1) * hw_out];
                    d2[oc * ncols + bi * hw_out..oc * ncols + (bi + 1) * hw_out]
                        .copy_from_slice(src);
                }
            }
        }

        let dw = dy2.dot(&cache.cols.t());
        {
            let gw = slice_mut(&mut grads.weight);
            for (g, d) in gw.iter_mut().zip(dw.iter()) {
                *g += *d;
            }
        }
        for (g, d) in grads.bias.iter_mut().zip(dy2.sum_axis(Axis(1)).iter()) {
            *g += *d;
        }

        if !need_input {
            return None;
        }
        let dcols = self.weight_matrix().t().dot(&dy2);
        let dcols = dcols.as_standard_layout();
        let mut dx = Array4::<T>::zeros((b, c, h, w));
        {
            let dxs = dx.as_slice_mut().unwrap();
            let cs = dcols.as_slice().unwrap();
            let (stride, pad) = (self.stride as isize, self.padding as isize);
            for ci in 0..c {
                for ki in 0..k {
                    for kj in 0..k {
                        let row = (ci * k + ki) * k + kj;
                        let src_row = &cs[row * ncols..(row + 1) * ncols];
                        for bi in 0..b {
                            let plane = &mut dxs[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                            for oy in 0..ho {
                                let iy = oy as isize * stride + ki as isize - pad;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let src = &src_row[bi * hw_out + oy * wo..bi * hw_out + (oy + 1) * wo];
                                let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                                for (ox, &g) in src.iter().enumerate() {
                                    let ix = ox as isize * stride + kj as isize - pad;
                                    if ix >= 0 && ix < w as isize {
                                        dst[ix as usize] += g;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Some(dx)
    }
}

impl<T: Float> Params<T> for Conv2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T], &[usize])) {
        f(&join(prefix, "weight"), slice(&self.weight), self.weight.shape());
        f(&join(prefix, "bias"), slice(&self.bias), self.bias.shape());
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T], &[usize])) {
        let shape = self.weight.shape().to_vec();
        f(&join(prefix, "weight"), slice_mut(&mut self.weight), &shape);
        let shape = self.bias.shape().to_vec();
        f(&join(prefix, "bias"), slice_mut(&mut self.bias), &shape);
    }
}

// ---------------------------------------------------------------------------
// Batch normalization

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
}

#[derive(Debug, Clone)]
pub struct NormCache<T> {
    xhat: Array4<T>,
    inv_std: Array1<T>,
    pub batch_mean: Array1<T>,
    /// Unbiased batch variance, used for the running estimate.
    pub batch_var: Array1<T>,
    train: bool,
}

impl<T: Float> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let c = self.gamma.len();
        BatchNorm2d {
            gamma: Array1::zeros(c),
            beta: Array1::zeros(c),
            running_mean: Array1::zeros(c),
            running_var: Array1::zeros(c),
        }
    }

    pub fn forward(&self, x: ArrayView4<T>, train: bool) -> (Array4<T>, NormCache<T>) {
        let x = x.as_standard_layout();
        let [b, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let hw = h * w;
        let n = b * hw;
        let xs = x.as_slice().unwrap();
        let eps = T::lit(BN_EPS);

        let mut mean = Array1::<T>::zeros(c);
        let mut var = Array1::<T>::zeros(c);
        let mut unbiased = Array1::<T>::zeros(c);
        if train {
            let nf = T::from_usize_lossy(n);
            for ci in 0..c {
                let mut sum = T::zero();
                for bi in 0..b {
                    for &v in &xs[(bi * c + ci) * hw..(bi * c + ci + 1) * hw] {
                        sum += v;
                    }
                }
                let m = sum / nf;
                let mut sq = T::zero();
                for bi in 0..b {
                    for &v in &xs[(bi * c + ci) * hw..(bi * c + ci + 1) * hw] {
                        let d = v - m;
                        sq += d * d;
                    }
                }
                mean[ci] = m;
                var[ci] = sq / nf;
                unbiased[ci] = if n > 1 {
                    sq / T::from_usize_lossy(n - 1)
                } else {
                    sq
                };
            }
        } else {
            mean.assign(&self.running_mean);
            var.assign(&self.running_var);
        }
        let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());

        let mut xhat = Array4::<T>::zeros((b, c, h, w));
        let mut y = Array4::<T>::zeros((b, c, h, w));
        {
            let xh = xhat.as_slice_mut().unwrap();
            let ys = y.as_slice_mut().unwrap();
            for bi in 0..b {
                for ci in 0..c {
                    let (m, is, g, be) = (mean[ci], inv_std[ci], self.gamma[ci], self.beta[ci]);
                    let r = (bi * c + ci) * hw..(bi * c + ci + 1) * hw;
                    for ((o, hv), &v) in ys[r.clone()].iter_mut().zip(&mut xh[r.clone()]).zip(&xs[r]) {
                        *hv = (v - m) * is;
                        *o = *hv * g + be;
                    }
                }
            }
        }
        record(OpKind::BatchNorm, 4 * (b * c * hw) as u64);
        (
            y,
            NormCache {
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: unbiased,
                train,
            },
        )
    }

    pub fn update_running(&mut self, cache: &NormCache<T>) {
        if !cache.train {
            return;
        }
        let mom = T::lit(BN_MOMENTUM);
        let keep = T::one() - mom;
        for ci in 0..self.gamma.len() {
            self.running_mean[ci] = keep * self.running_mean[ci] + mom * cache.batch_mean[ci];
            self.running_var[ci] = keep * self.running_var[ci] + mom * cache.batch_var[ci];
        }
    }

    pub fn backward(&self, cache: &NormCache<T>, dy: ArrayView4<T>, grads: &mut BatchNorm2d<T>) -> Array4<T> {
        let dy = dy.as_standard_layout();
        let [b, c, h, w] = [dy.shape()[0], dy.shape()[1], dy.shape()[2], dy.shape()[3]];
        let hw = h * w;
        let n = T::from_usize_lossy(b * hw);
        let ds = dy.as_slice().unwrap();
        let xh = cache.xhat.as_slice().unwrap();
        let mut dx = Array4::<T>::zeros((b, c, h, w));
        let dxs = dx.as_slice_mut().unwrap();
        for ci in 0..c {
            let mut sum_dy = T::zero();
            let mut sum_dy_xh = T::zero();
            for bi in 0..b {
                let r = (bi * c + ci) * hw..(bi * c + ci + 1) * hw;
                for (&d, &xv) in ds[r.clone()].iter().zip(&xh[r]) {
                    sum_dy += d;
                    sum_dy_xh += d * xv;
                }
            }
            grads.gamma[ci] += sum_dy_xh;
            grads.beta[ci] += sum_dy;
            let g = self.gamma[ci];
            let is = cache.inv_std[ci];
            for bi in 0..b {
                let r = (bi * c + ci) * hw..(bi * c + ci + 1) * hw;
                for ((o, &d), &xv) in dxs[r.clone()].iter_mut().zip(&ds[r.clone()]).zip(&xh[r]) {
                    *o = if cache.train {
                        g * is * (d - sum_dy / n - xv * sum_dy_xh / n)
                    } else {
                        g * is * d
                    };
                }
            }
        }
        dx
    }
}

impl<T: Float> Params<T> for BatchNorm2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T], &[usize])) {
        f(&join(prefix, "gamma"), slice(&self.gamma), self.gamma.shape());
        f(&join(prefix, "beta"), slice(&self.beta), self.beta.shape());
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T], &[usize])) {
        let shape = self.gamma.shape().to_vec();
        f(&join(prefix, "gamma"), slice_mut(&mut self.gamma), &shape);
        f(&join(prefix, "beta"), slice_mut(&mut self.beta), &shape);
    }
}

// ---------------------------------------------------------------------------
// Dense layer

#[derive(Debug, Clone)]
pub struct Linear<T> {
    /// `[out, in]`
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Float> Linear<T> {
    /// Uniform(±1/√fan_in) weights, zero bias.
    pub fn new<R: Rng + ?Sized>(rng: &mut R, inputs: usize, outputs: usize) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Linear {
            weight: Array2::from_shape_vec((outputs, inputs), uniform(rng, inputs * outputs, bound))
                .unwrap(),
            bias: Array1::zeros(outputs),
        }
    }

    /// He-uniform weights for layers followed by a rectifier.
    pub fn new_rectified<R: Rng + ?Sized>(rng: &mut R, inputs: usize, outputs: usize) -> Self {
        let bound = (6.0 / inputs as f64).sqrt();
        Linear {
            weight: Array2::from_shape_vec((outputs, inputs), uniform(rng, inputs * outputs, bound))
                .unwrap(),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Linear {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    /// `x: [n, in] -> [n, out]`
    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        record(OpKind::Linear, 2 * (x.nrows() * self.inputs() * self.outputs()) as u64);
        y
    }

    pub fn backward(&self, x: ArrayView2<T>, dy: ArrayView2<T>, grads: &mut Linear<T>) -> Array2<T> {
        grads.weight += &dy.t().dot(&x);
        grads.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }
}

impl<T: Float> Params<T> for Linear<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T], &[usize])) {
        f(&join(prefix, "weight"), slice(&self.weight), self.weight.shape());
        f(&join(prefix, "bias"), slice(&self.bias), self.bias.shape());
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T], &[usize])) {
        let shape = self.weight.shape().to_vec();
        f(&join(prefix, "weight"), slice_mut(&mut self.weight), &shape);
        let shape = self.bias.shape().to_vec();
        f(&join(prefix, "bias"), slice_mut(&mut self.bias), &shape);
    }
}

// ---------------------------------------------------------------------------
// Elementwise helpers

pub fn relu4<T: Float>(x: Array4<T>) -> Array4<T> {
    record(OpKind::Relu, x.len() as u64);
    x.mapv_into(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu2<T: Float>(x: Array2<T>) -> Array2<T> {
    record(OpKind::Relu, x.len() as u64);
    x.mapv_into(|v| if v > T::zero() { v } else { T::zero() })
}

/// Masks `dy` by the positivity of the rectifier's output.
pub fn relu_backward<T: Float, D: ndarray::Dimension>(
    out: &ndarray::Array<T, D>,
    mut dy: ndarray::Array<T, D>,
) -> ndarray::Array<T, D> {
    ndarray::Zip::from(&mut dy).and(out).for_each(|d, &o| {
        if o <= T::zero() {
            *d = T::zero();
        }
    });
    dy
}

/// Global average pooling `[B, C, H, W] -> [B, C]`.
pub fn global_avg_pool<T: Float>(x: ArrayView4<T>) -> Array2<T> {
    let [b, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let inv = T::one() / T::from_usize_lossy(h * w);
    let mut out = Array2::<T>::zeros((b, c));
    for bi in 0..b {
        for ci in 0..c {
            let plane = x.slice(s![bi, ci, .., ..]);
            out[[bi, ci]] = plane.iter().fold(T::zero(), |a, &v| a + v) * inv;
        }
    }
    record(OpKind::GlobalPool, (b * c * h * w) as u64);
    out
}

pub fn global_avg_pool_backward<T: Float>(dy: ArrayView2<T>, h: usize, w: usize) -> Array4<T> {
    let (b, c) = dy.dim();
    let inv = T::one() / T::from_usize_lossy(h * w);
    let mut dx = Array4::<T>::zeros((b, c, h, w));
    for bi in 0..b {
        for ci in 0..c {
            dx.slice_mut(s![bi, ci, .., ..]).fill(dy[[bi, ci]] * inv);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv2d::<f64>::new(&mut rng, 2, 3, 3, 2, 1);
        let x = Array4::from_shape_fn((2, 2, 5, 6), |(b, c, i, j)| {
            ((b * 7 + c * 5 + i * 3 + j) as f64 * 0.37).sin()
        });
        let (y, _) = conv.forward(x.view());
        let (ho, wo) = conv.output_hw(5, 6);
        assert_eq!(y.shape(), &[2, 3, ho, wo]);
        for b in 0..2 {
            for o in 0..3 {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = conv.bias[o];
                        for c in 0..2 {
                            for ki in 0..3 {
                                for kj in 0..3 {
                                    let iy = (oy * 2 + ki) as isize - 1;
                                    let ix = (ox * 2 + kj) as isize - 1;
                                    if iy >= 0 && iy < 5 && ix >= 0 && ix < 6 {
                                        acc += conv.weight[[o, c, ki, kj]]
                                            * x[[b, c, iy as usize, ix as usize]];
                                    }
                                }
                            }
                        }
                        assert!((acc - y[[b, o, oy, ox]]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn batchnorm_train_output_is_standardized() {
        let bn = BatchNorm2d::<f64>::new(2);
        let x = Array4::from_shape_fn((3, 2, 2, 2), |(b, c, i, j)| (b + 2 * c + i * j) as f64);
        let (y, cache) = bn.forward(x.view(), true);
        for c in 0..2 {
            let plane = y.slice(s![.., c, .., ..]);
            let mean = plane.mean().unwrap();
            let var = plane.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
        let mut bn = bn;
        bn.update_running(&cache);
        assert!(bn.running_mean[1] > 0.0);
    }

    #[test]
    fn params_roundtrip_through_flatten() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::<f32>::new(&mut rng, 4, 3);
        let flat = lin.flatten();
        let mut other = lin.zeros_like();
        other.unflatten(&flat);
        assert_eq!(other.weight, lin.weight);
        assert_eq!(lin.num_params(), 15);
    }

    #[test]
    fn gap_of_single_one() {
        let mut x = Array4::<f64>::zeros((1, 2, 4, 4));
        x[[0, 1, 2, 3]] = 1.0;
        let g = global_avg_pool(x.view());
        assert_eq!(g[[0, 0]], 0.0);
        assert_eq!(g[[0, 1]], 1.0 / 16.0);
    }
}
