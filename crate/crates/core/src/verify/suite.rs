//! Finite-difference checks of every hand-written backward pass, at `f64`.

use ndarray::{Array, Array2, Array3, Array4, ArrayView2, Dimension, ShapeBuilder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{grad_check, GradCheckOptions, GradCheckReport};
use crate::backbone::{classification_loss, classification_loss_grad, one_hot, BackboneConfig, Classifier, Encoder, Reduction};
use crate::gae::{angle_loss_grad, masked_l1_grad, AngleMode, Cell, PolarHead};
use crate::gat::transfer_batch;
use crate::nn::{global_avg_pool, global_avg_pool_backward, Params};
use crate::sda::{resample, resample_backward, FeedbackGenerator, GridPlan, SamplingGrid};

#[derive(Debug, Clone, Serialize)]
pub struct GradCase {
    pub name: &'static str,
    pub report: GradCheckReport,
}

fn random<Sh: ShapeBuilder>(rng: &mut ChaCha8Rng, shape: Sh, lo: f64, hi: f64) -> Array<f64, Sh::Dim> {
    Array::from_shape_simple_fn(shape, || rng.gen_range(lo..hi))
}

fn dot<D: Dimension>(a: &Array<f64, D>, b: &Array<f64, D>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn flat<D: Dimension>(a: &Array<f64, D>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn reshape<D: Dimension>(x: &[f64], like: &Array<f64, D>) -> Array<f64, D> {
    Array::from_shape_vec(like.raw_dim(), x.to_vec()).expect("same length")
}

fn case(name: &'static str, x: &[f64], analytic: &[f64], seed: u64, f: impl Fn(&[f64]) -> f64) -> GradCase {
    let opts = GradCheckOptions {
        seed,
        ..GradCheckOptions::default()
    };
    GradCase {
        name,
        report: grad_check(f, x, analytic, opts),
    }
}

/// A smooth non-uniform feedback map at feature resolution.
fn bumpy_map(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Array2<f64> {
    random(rng, (h, w), 0.1, 0.9)
}

/// Runs the gradient suite with inputs drawn from `seed`.
pub fn gradient_suite(seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // resample w.r.t. image and grid
    {
        let img = random(&mut rng, (3, 12, 10), 0.0, 1.0);
        let grid = SamplingGrid {
            map_x: random(&mut rng, (9, 11), 0.02, 0.98),
            map_y: random(&mut rng, (9, 11), 0.02, 0.98),
            kernel_sigma: 0.1,
            grid_side: 8,
        };
        let r = random(&mut rng, (3, 9, 11), -1.0, 1.0);
        let (d_img, dmx, dmy) = resample_backward(img.view(), &grid, r.view(), true);
        out.push(case("resample/image", &flat(&img), &flat(&d_img.unwrap()), seed, |x| {
            dot(&resample(reshape(x, &img).view(), &grid), &r)
        }));
        let n = grid.map_x.len();
        let mut coords = flat(&grid.map_x);
        coords.extend(flat(&grid.map_y));
        let mut analytic = flat(&dmx);
        analytic.extend(flat(&dmy));
        out.push(case("resample/grid", &coords, &analytic, seed, |x| {
            let g = SamplingGrid {
                map_x: reshape(&x[..n], &grid.map_x),
                map_y: reshape(&x[n..], &grid.map_y),
                ..grid.clone()
            };
            dot(&resample(img.view(), &g), &r)
        }));
    }

    // build_grid w.r.t. D
    {
        let plan = GridPlan::<f64>::new((6, 6), (20, 20), 0.12, 12).expect("valid plan");
        let d = bumpy_map(&mut rng, 6, 6);
        let (grid, cache) = plan.build(d.view());
        let rx = random(&mut rng, grid.map_x.raw_dim(), -1.0, 1.0);
        let ry = random(&mut rng, grid.map_y.raw_dim(), -1.0, 1.0);
        let analytic = plan.backward(&cache, rx.view(), ry.view());
        out.push(case("build_grid/feedback", &flat(&d), &flat(&analytic), seed, |x| {
            let (g, _) = plan.build(reshape(x, &d).view());
            dot(&g.map_x, &rx) + dot(&g.map_y, &ry)
        }));
    }

    // generate_feedback w.r.t. features and projection
    {
        let mut gen = FeedbackGenerator::<f64>::new(5);
        let init = random(&mut rng, 6, -0.5, 0.5);
        gen.unflatten(init.as_slice().unwrap());
        let feats = random(&mut rng, (2, 5, 4, 4), -1.0, 1.0);
        let d = gen.generate(feats.view());
        let r = random(&mut rng, d.raw_dim(), -1.0, 1.0);
        let mut grads = gen.zeros_like();
        let dx = gen.backward(feats.view(), d.view(), r.view(), &mut grads);
        out.push(case("feedback/features", &flat(&feats), &flat(&dx), seed, |x| {
            dot(&gen.generate(reshape(x, &feats).view()), &r)
        }));
        out.push(case("feedback/params", &gen.flatten(), &grads.flatten(), seed, |x| {
            let mut g = gen.clone();
            g.unflatten(x);
            dot(&g.generate(feats.view()), &r)
        }));
    }

    // amplification chain: features -> D -> grid -> warped image
    {
        let mut gen = FeedbackGenerator::<f64>::new(4);
        let init = random(&mut rng, 5, -1.0, 1.0);
        gen.unflatten(init.as_slice().unwrap());
        let plan = GridPlan::<f64>::new((4, 4), (16, 16), 0.15, 10).expect("valid plan");
        let feats = random(&mut rng, (1, 4, 4, 4), -1.0, 1.0);
        let img = random(&mut rng, (3, 16, 16), 0.0, 1.0);
        let r = random(&mut rng, (3, 16, 16), -1.0, 1.0);
        let forward = |f: &Array4<f64>| -> (Array3<f64>, f64) {
            let d = gen.generate(f.view());
            let (grid, _) = plan.build(d.slice(ndarray::s![0, .., ..]));
            (d, dot(&resample(img.view(), &grid), &r))
        };
        let (d, _) = forward(&feats);
        let (grid, cache) = plan.build(d.slice(ndarray::s![0, .., ..]));
        let (_, dmx, dmy) = resample_backward(img.view(), &grid, r.view(), false);
        let dd = plan.backward(&cache, dmx.view(), dmy.view()).insert_axis(ndarray::Axis(0));
        let mut grads = gen.zeros_like();
        let dx = gen.backward(feats.view(), d.view(), dd.view(), &mut grads);
        out.push(case("amplify/features", &flat(&feats), &flat(&dx), seed, |x| {
            forward(&reshape(x, &feats)).1
        }));
    }

    // L_dis and L_ang w.r.t. predictions
    {
        let pred = random(&mut rng, (6, 6), 0.0, 1.0);
        let target = random(&mut rng, (6, 6), 0.0, 1.0);
        let mut mask = random(&mut rng, (6, 6), 0.0, 1.0).mapv(|v| v > 0.4);
        mask[[2, 3]] = false;
        let loss_dis = |p: ArrayView2<f64>| masked_l1_grad(p, target.view(), mask.view());
        let (_, g) = loss_dis(pred.view());
        out.push(case("l_dis/rho", &flat(&pred), &flat(&g), seed, |x| {
            loss_dis(reshape(x, &pred).view()).0
        }));
        let loss_ang = |p: ArrayView2<f64>| angle_loss_grad(p, target.view(), mask.view(), AngleMode::Deviation);
        let (_, g) = loss_ang(pred.view());
        out.push(case("l_ang/theta", &flat(&pred), &flat(&g), seed, |x| {
            loss_ang(reshape(x, &pred).view()).0
        }));
    }

    // polar head w.r.t. features and parameters
    {
        let head = PolarHead::<f64>::new(&mut rng, 4, 8);
        let feats = random(&mut rng, (4, 3, 3), -1.0, 1.0);
        let reference = Cell { x: 1, y: 2 };
        let r_rho = random(&mut rng, (3, 3), -1.0, 1.0);
        let r_theta = random(&mut rng, (3, 3), -1.0, 1.0);
        let eval = |h: &PolarHead<f64>, f: &Array3<f64>| {
            let (p, _) = h.predict(f.view(), reference);
            dot(&p.rho_hat, &r_rho) + dot(&p.theta_hat, &r_theta)
        };
        let (_, cache) = head.predict(feats.view(), reference);
        let mut grads = head.zeros_like();
        let dx = head.backward(&cache, r_rho.view(), r_theta.view(), &mut grads);
        out.push(case("polar_head/features", &flat(&feats), &flat(&dx), seed, |x| {
            eval(&head, &reshape(x, &feats))
        }));
        out.push(case("polar_head/params", &head.flatten(), &grads.flatten(), seed, |x| {
            let mut h = head.clone();
            h.unflatten(x);
            eval(&h, &feats)
        }));
    }

    // L_GAT w.r.t. both pathways' features
    {
        let teacher = random(&mut rng, (3, 5, 2, 2), -1.0, 1.0);
        let student = random(&mut rng, (3, 5, 2, 2), -1.0, 1.0);
        let loss = |t: &Array4<f64>, s: &Array4<f64>| {
            transfer_batch(global_avg_pool(t.view()).view(), global_avg_pool(s.view()).view())
        };
        let (_, dt, ds) = loss(&teacher, &student);
        let dt = global_avg_pool_backward(dt.view(), 2, 2);
        let ds = global_avg_pool_backward(ds.view(), 2, 2);
        out.push(case("l_gat/teacher", &flat(&teacher), &flat(&dt), seed, |x| {
            loss(&reshape(x, &teacher), &student).0
        }));
        out.push(case("l_gat/student", &flat(&student), &flat(&ds), seed, |x| {
            loss(&teacher, &reshape(x, &student)).0
        }));
    }

    // L_CLS through the classifier head
    {
        let clf = Classifier::<f64>::new(&mut rng, 6, 5);
        let feats = random(&mut rng, (4, 6, 2, 2), -1.0, 1.0);
        let labels = one_hot::<f64>(&[0, 3, 4, 3], 5);
        let eval = |c: &Classifier<f64>, f: &Array4<f64>| {
            let p = c.classify(f.view()).expect("shapes match");
            classification_loss(p.probs.view(), labels.view(), Reduction::Mean).expect("shapes match")
        };
        let pred = clf.classify(feats.view()).expect("shapes match");
        let d_logits = classification_loss_grad(pred.probs.view(), labels.view(), Reduction::Mean);
        let mut grads = clf.zeros_like();
        let dx = clf.backward(&pred, d_logits.view(), (2, 2), &mut grads);
        out.push(case("l_cls/features", &flat(&feats), &flat(&dx), seed, |x| {
            eval(&clf, &reshape(x, &feats))
        }));
        out.push(case("l_cls/params", &clf.flatten(), &grads.flatten(), seed, |x| {
            let mut c = clf.clone();
            c.unflatten(x);
            eval(&c, &feats)
        }));
    }

    // encoder (conv + batch norm + relu) in training mode
    {
        let cfg = BackboneConfig {
            input_channels: 3,
            stage_channels: vec![4, 6],
            stride_per_stage: vec![2, 2],
        };
        let enc = Encoder::<f64>::new(&cfg, &mut rng).expect("valid backbone");
        let imgs = random(&mut rng, (2, 3, 8, 8), 0.0, 1.0);
        let (feats, cache) = enc.encode(imgs.view(), true).expect("valid input");
        let r = random(&mut rng, feats.raw_dim(), -1.0, 1.0);
        let mut grads = enc.zeros_like();
        let dx = enc.backward(&cache, r.clone(), &mut grads, true).expect("input gradient requested");
        let eval = |e: &Encoder<f64>, x: &Array4<f64>| dot(&e.encode(x.view(), true).expect("valid input").0, &r);
        out.push(case("encoder/input", &flat(&imgs), &flat(&dx), seed, |x| {
            eval(&enc, &reshape(x, &imgs))
        }));
        out.push(case("encoder/params", &enc.flatten(), &grads.flatten(), seed, |x| {
            let mut e = enc.clone();
            e.unflatten(x);
            eval(&e, &imgs)
        }));
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_covers_every_backward() {
        let cases = gradient_suite(0);
        assert_eq!(cases.len(), 16);
        for c in &cases {
            assert!(c.report.passed, "{}: {}", c.name, c.report);
        }
    }
}
