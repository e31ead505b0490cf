//! Independent oracles: central-difference gradient checking and scalar-loop
//! recomputation of the polar targets and geometric losses.
//!
//! Nothing here calls into the vectorized implementations it is used to check.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::gae::{Cell, PolarField, PolarPrediction};

mod suite;

pub use suite::{gradient_suite, GradCase};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub rel_tol: f64,
    /// Coordinates whose absolute error is below this pass regardless of the
    /// relative error (gradients near zero).
    pub abs_tol: f64,
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            rel_tol: 1e-4,
            abs_tol: 1e-7,
            max_coords: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_coordinate: usize,
    pub checked: usize,
    pub passed: bool,
    pub failure: Option<String>,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} max_rel={:.3e} max_abs={:.3e} worst={} checked={}",
            if self.passed { "PASS" } else { "FAIL" },
            self.max_rel_error,
            self.max_abs_error,
            self.worst_coordinate,
            self.checked
        )?;
        if let Some(msg) = &self.failure {
            write!(f, " ({msg})")?;
        }
        Ok(())
    }
}

/// Compares `analytic` with central differences of `f` at `x`.
///
/// Tensors larger than `max_coords` are checked on a seeded random subset of
/// coordinates.
pub fn grad_check<F>(f: F, x: &[f64], analytic: &[f64], opts: GradCheckOptions) -> GradCheckReport
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len(), "gradient length");
    let coords: Vec<usize> = if x.len() <= opts.max_coords {
        (0..x.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut idx = sample(&mut rng, x.len(), opts.max_coords).into_vec();
        idx.sort_unstable();
        idx
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_coordinate: 0,
        checked: 0,
        passed: true,
        failure: None,
    };
    let mut probe = x.to_vec();
    for &i in &coords {
        let orig = probe[i];
        probe[i] = orig + opts.step;
        let fp = f(&probe);
        probe[i] = orig - opts.step;
        let fm = f(&probe);
        probe[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            report.passed = false;
            report.worst_coordinate = i;
            report.failure = Some(format!("non-finite function value at coordinate {i}"));
            return report;
        }
        let numeric = (fp - fm) / (2.0 * opts.step);
        let abs = (numeric - analytic[i]).abs();
        let scale = numeric.abs().max(analytic[i].abs());
        // gradients below the absolute floor are judged by absolute error alone
        let rel = if scale >= opts.abs_tol { abs / scale } else { 0.0 };
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_coordinate = i;
        }
        if abs >= opts.abs_tol && rel >= opts.rel_tol {
            report.passed = false;
        }
        report.checked += 1;
    }
    report
}

/// Polar targets recomputed cell by cell.
pub fn brute_polar(reference: Cell, h: usize, w: usize) -> PolarField<f64> {
    let diag = ((w * w + h * h) as f64).sqrt();
    let mut rho = Array2::zeros((h, w));
    let mut theta = Array2::zeros((h, w));
    for n in 0..h {
        for m in 0..w {
            let dx = reference.x as f64 - m as f64;
            let dy = reference.y as f64 - n as f64;
            rho[[n, m]] = (dx * dx + dy * dy).sqrt() / diag;
            theta[[n, m]] = (dy.atan2(dx) + PI) / (2.0 * PI);
        }
    }
    PolarField {
        reference,
        rho,
        theta,
    }
}

/// `(L_dis, L_ang)` from explicit sums over the masked cells.
pub fn brute_losses(pred: &PolarPrediction<f64>, targets: &PolarField<f64>, mask: &Array2<bool>) -> (f64, f64) {
    let (h, w) = mask.dim();
    let mut count = 0usize;
    let mut dis = 0.0;
    let mut delta_sum = 0.0;
    for n in 0..h {
        for m in 0..w {
            if mask[[n, m]] {
                count += 1;
                dis += (pred.rho_hat[[n, m]] - targets.rho[[n, m]]).abs();
                delta_sum += (pred.theta_hat[[n, m]] - targets.theta[[n, m]]).abs();
            }
        }
    }
    if count == 0 {
        return (0.0, 0.0);
    }
    let delta_mean = delta_sum / count as f64;
    let mut ang = 0.0;
    for n in 0..h {
        for m in 0..w {
            if mask[[n, m]] {
                let delta = (pred.theta_hat[[n, m]] - targets.theta[[n, m]]).abs();
                ang += (delta - delta_mean).abs();
            }
        }
    }
    (dis / count as f64, ang / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes_tightly() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.3 - 1.0).collect();
        let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let r = grad_check(|v| v.iter().map(|a| a * a).sum(), &x, &g, GradCheckOptions::default());
        assert!(r.passed, "{r}");
        assert!(r.max_rel_error < 1e-8, "{r}");
    }

    #[test]
    fn scaled_gradient_fails() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.3 + 0.5).collect();
        let g: Vec<f64> = x.iter().map(|v| 4.0 * v).collect();
        let r = grad_check(|v| v.iter().map(|a| a * a).sum(), &x, &g, GradCheckOptions::default());
        assert!(!r.passed);
    }

    #[test]
    fn non_finite_reports_location() {
        let x = vec![1.0, 0.0];
        let r = grad_check(|v| 1.0 / v[1].abs().min(v[1].abs()) * 0.0 + (v[1] * 0.0).ln(), &x, &[0.0, 0.0], GradCheckOptions::default());
        assert!(!r.passed);
        assert!(r.failure.is_some());
    }

    #[test]
    fn subsamples_large_inputs() {
        let x = vec![0.5; 1000];
        let g = vec![1.0; 1000];
        let r = grad_check(|v| v.iter().sum(), &x, &g, GradCheckOptions::default());
        assert_eq!(r.checked, 256);
        assert!(r.passed);
    }

    #[test]
    fn corner_reference_closed_form() {
        let (h, w) = (5usize, 7usize);
        let f = brute_polar(Cell { x: 0, y: 0 }, h, w);
        let expected = (((w - 1) * (w - 1) + (h - 1) * (h - 1)) as f64).sqrt() / ((w * w + h * h) as f64).sqrt();
        assert!((f.rho[[h - 1, w - 1]] - expected).abs() < 1e-15);
    }

    #[test]
    fn below_reference_has_quarter_angle() {
        let f = brute_polar(Cell { x: 2, y: 1 }, 5, 5);
        for n in 2..5 {
            assert!((f.theta[[n, 2]] - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn single_masked_cell_has_zero_angle_loss() {
        let targets = brute_polar(Cell { x: 0, y: 0 }, 3, 3);
        let pred = PolarPrediction {
            rho_hat: Array2::from_elem((3, 3), 0.3),
            theta_hat: Array2::from_elem((3, 3), 0.9),
        };
        let mut mask = Array2::from_elem((3, 3), false);
        mask[[1, 2]] = true;
        let (_, ang) = brute_losses(&pred, &targets, &mask);
        assert_eq!(ang, 0.0);
    }
}
