use geosup::gae::{
    angle_loss, distance_loss, gae_loss, pattern_map, polar_targets, locate_reference, Cell, PolarPrediction,
};
use geosup::gat::{gap, transfer_loss};
use geosup::sda::{build_grid, constant_map, resample, SamplingGrid};
use geosup::verify::{brute_losses, brute_polar};
use ndarray::{Array2, Array3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_field(rng: &mut ChaCha8Rng, h: usize, w: usize) -> (PolarPrediction<f64>, Cell, Array2<bool>) {
    let pred = PolarPrediction {
        rho_hat: Array2::from_shape_simple_fn((h, w), || rng.gen::<f64>()),
        theta_hat: Array2::from_shape_simple_fn((h, w), || rng.gen::<f64>()),
    };
    let reference = Cell {
        x: rng.gen_range(0..w),
        y: rng.gen_range(0..h),
    };
    let mut mask = Array2::from_shape_simple_fn((h, w), || rng.gen_bool(0.5));
    mask[[reference.y, reference.x]] = false;
    (pred, reference, mask)
}

#[test]
fn polar_targets_match_scalar_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let h = rng.gen_range(1..13);
        let w = rng.gen_range(1..13);
        let r = Cell {
            x: rng.gen_range(0..w),
            y: rng.gen_range(0..h),
        };
        let fast = polar_targets::<f64>(r, h, w);
        let slow = brute_polar(r, h, w);
        for (a, b) in fast.rho.iter().zip(slow.rho.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
        for (a, b) in fast.theta.iter().zip(slow.theta.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn gae_losses_match_scalar_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let (h, w) = (rng.gen_range(2..10), rng.gen_range(2..10));
        let (pred, reference, mask) = random_field(&mut rng, h, w);
        let targets = polar_targets::<f64>(reference, h, w);
        let got = gae_loss(&pred, &targets, &mask);
        let (dis, ang) = brute_losses(&pred, &targets, &mask);
        assert!((got.l_dis - dis).abs() <= 1e-10);
        assert!((got.l_ang - ang).abs() <= 1e-10);
        assert!((got.l_gae - dis - ang).abs() <= 1e-10);
    }
}

#[test]
fn corner_reference_on_four_by_four() {
    let t = polar_targets::<f64>(Cell { x: 0, y: 0 }, 4, 4);
    assert!((t.rho[[3, 3]] - 0.75).abs() < 1e-15);
}

#[test]
fn uniform_feedback_gives_identity_and_exact_resample() {
    let map = constant_map::<f64>(4, 4, 0.37);
    let grid = build_grid(map.view(), (32, 32), 0.1, 16).unwrap();
    let id = SamplingGrid::<f64>::identity(32, 32);
    for (a, b) in grid.map_x.iter().zip(id.map_x.iter()) {
        assert!((a - b).abs() < 1e-6);
    }
    for (a, b) in grid.map_y.iter().zip(id.map_y.iter()) {
        assert!((a - b).abs() < 1e-6);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = Array3::from_shape_simple_fn((3, 32, 32), || rng.gen::<f64>());
    assert_eq!(resample(img.view(), &id), img);
}

#[test]
fn reference_is_pattern_argmax() {
    let mut f = Array3::<f64>::zeros((3, 4, 5));
    f[[1, 2, 3]] = 2.0;
    f[[0, 2, 3]] = 1.0;
    f[[2, 0, 0]] = 2.5;
    let pm = pattern_map(f.view());
    assert_eq!(locate_reference(&pm), Cell { x: 3, y: 2 });
    assert_eq!(pm.mask.iter().filter(|&&m| m).count(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn polar_targets_stay_in_unit_range(h in 1usize..16, w in 1usize..16, rx in 0usize..16, ry in 0usize..16) {
        let r = Cell { x: rx % w, y: ry % h };
        let t = polar_targets::<f64>(r, h, w);
        prop_assert!(t.rho.iter().all(|&v| (0.0..1.0).contains(&v)));
        prop_assert!(t.theta.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert_eq!(t.rho[[r.y, r.x]], 0.0);
    }

    #[test]
    fn constant_angle_offset_costs_nothing(seed in 0u64..1000, c in prop::sample::select(vec![0.01, 0.05, 0.1])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, reference, mask) = random_field(&mut rng, 7, 6);
        let targets = polar_targets::<f64>(reference, 7, 6);
        let pred = PolarPrediction {
            rho_hat: targets.rho.clone(),
            theta_hat: targets.theta.mapv(|t| t + c),
        };
        prop_assert!(angle_loss(&pred, &targets, &mask).abs() < 1e-10);
        prop_assert!(distance_loss(&pred, &targets, &mask).abs() < 1e-15);
    }

    #[test]
    fn constant_image_survives_any_grid(seed in 0u64..1000, v in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = Array3::from_elem((3, 9, 7), v);
        let grid = SamplingGrid {
            map_x: Array2::from_shape_simple_fn((5, 6), || rng.gen::<f64>()),
            map_y: Array2::from_shape_simple_fn((5, 6), || rng.gen::<f64>()),
            kernel_sigma: 0.1,
            grid_side: 8,
        };
        let out = resample(img.view(), &grid);
        prop_assert!(out.iter().all(|&o| (o - v).abs() < 1e-12));
    }

    #[test]
    fn built_grids_stay_in_the_image(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map = Array2::from_shape_simple_fn((4, 4), || rng.gen::<f64>());
        let grid = build_grid(map.view(), (16, 16), 0.12, 10).unwrap();
        prop_assert!(grid.map_x.iter().chain(grid.map_y.iter()).all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn transfer_loss_is_a_metric_on_pooled_features(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || Array3::from_shape_simple_fn((4, 3, 3), || rng.gen::<f64>());
        let (a, b, c) = (draw(), draw(), draw());
        let ab = transfer_loss(a.view(), b.view()).unwrap();
        let ba = transfer_loss(b.view(), a.view()).unwrap();
        let ac = transfer_loss(a.view(), c.view()).unwrap();
        let cb = transfer_loss(c.view(), b.view()).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab <= ac + cb + 1e-12);
        prop_assert_eq!(transfer_loss(a.view(), a.view()).unwrap(), 0.0);
        let pooled = gap(a.view());
        prop_assert!(pooled.iter().all(|&p| (0.0..1.0).contains(&p)));
    }
}
