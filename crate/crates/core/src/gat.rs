//! Geometric attribute transfer: pooled-feature alignment between the
//! amplified pathway (teacher) and the classification pathway (student).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayView3, Axis};

use crate::error::{Error, Result};
use crate::instrument::{record, OpKind};
use crate::scalar::Float;

/// Channel-wise spatial mean of a `[C, H, W]` map.
pub fn gap<T: Float>(features: ArrayView3<T>) -> Array1<T> {
    let (c, h, w) = features.dim();
    let inv = T::one() / T::from_usize_lossy(h * w);
    record(OpKind::GlobalPool, (c * h * w) as u64);
    Array1::from_shape_fn(c, |ci| {
        features.index_axis(Axis(0), ci).iter().fold(T::zero(), |a, &v| a + v) * inv
    })
}

/// `‖g(T) − g(F)‖₂`.
pub fn transfer_loss<T: Float>(teacher: ArrayView3<T>, student: ArrayView3<T>) -> Result<T> {
    if teacher.dim().0 != student.dim().0 {
        return Err(Error::config(format!(
            "transfer needs matching channels, got {} and {}",
            teacher.dim().0,
            student.dim().0
        )));
    }
    let gt = gap(teacher);
    let gf = gap(student);
    Ok(pooled_distance(gt.view(), gf.view()))
}

pub fn pooled_distance<T: Float>(a: ArrayView1<T>, b: ArrayView1<T>) -> T {
    a.iter()
        .zip(b.iter())
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
        .sqrt()
}

/// Batch transfer loss (mean over images) and the gradient of each pooled
/// input. The gradient is zero wherever the pooled vectors coincide.
pub fn transfer_batch<T: Float>(teacher: ArrayView2<T>, student: ArrayView2<T>) -> (T, Array2<T>, Array2<T>) {
    let (b, c) = teacher.dim();
    let inv_b = T::one() / T::from_usize_lossy(b.max(1));
    let mut d_teacher = Array2::<T>::zeros((b, c));
    let mut total = T::zero();
    for bi in 0..b {
        let dist = pooled_distance(teacher.row(bi), student.row(bi));
        total += dist;
        if dist > T::zero() {
            for ci in 0..c {
                d_teacher[[bi, ci]] = (teacher[[bi, ci]] - student[[bi, ci]]) / dist * inv_b;
            }
        }
    }
    record(OpKind::Transfer, (3 * b * c) as u64);
    let d_student = d_teacher.mapv(|v| -v);
    (total * inv_b, d_teacher, d_student)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array3, Axis};

    #[test]
    fn constant_field_pools_to_value() {
        let f = Array3::from_elem((3, 4, 4), 0.7f64);
        assert!(gap(f.view()).iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn single_one_pools_to_sixteenth() {
        let mut f = Array3::<f64>::zeros((2, 4, 4));
        f[[1, 0, 3]] = 1.0;
        let g = gap(f.view());
        assert_eq!(g[0], 0.0);
        assert_eq!(g[1], 1.0 / 16.0);
    }

    #[test]
    fn identical_pathways_give_zero() {
        let f = Array3::from_shape_fn((3, 2, 2), |(c, i, j)| (c + i + j) as f64);
        assert_eq!(transfer_loss(f.view(), f.view()).unwrap(), 0.0);
    }

    #[test]
    fn three_four_five() {
        let mut t = Array3::<f64>::zeros((4, 2, 2));
        t.index_axis_mut(Axis(0), 0).fill(3.0);
        t.index_axis_mut(Axis(0), 1).fill(4.0);
        let f = Array3::<f64>::zeros((4, 2, 2));
        assert!((transfer_loss(t.view(), f.view()).unwrap() - 5.0).abs() < 1e-15);
        assert!((transfer_loss(f.view(), t.view()).unwrap() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn channel_mismatch_is_error() {
        let t = Array3::<f64>::zeros((4, 2, 2));
        let f = Array3::<f64>::zeros((3, 2, 2));
        assert!(matches!(transfer_loss(t.view(), f.view()), Err(Error::Config(_))));
    }
}
