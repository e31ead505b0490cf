//! Scalar abstraction shared by every numeric module.
//!
//! Training runs in `f32`; gradient checks and oracles run in `f64`.

use ndarray::NdFloat;
use num_traits::FromPrimitive;

/// Floating-point element type for tensors, layers, and losses.
pub trait Float: NdFloat + FromPrimitive + Default + Send + Sync + 'static {
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("representable count")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    #[inline]
    fn to_f32_lossy(self) -> f32 {
        num_traits::ToPrimitive::to_f32(&self).unwrap_or(f32::NAN)
    }

    fn sigmoid(self) -> Self {
        if self >= Self::zero() {
            Self::one() / (Self::one() + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::one() + e)
        }
    }

    /// Sign with `signum(0) = 0`, the subgradient used for absolute values.
    #[inline]
    fn sign0(self) -> Self {
        if self > Self::zero() {
            Self::one()
        } else if self < Self::zero() {
            -Self::one()
        } else {
            Self::zero()
        }
    }
}

impl Float for f32 {}
impl Float for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(Float::sigmoid(0.0f64), 0.5);
        assert!(Float::sigmoid(-800.0f64) >= 0.0);
        assert!(Float::sigmoid(800.0f64) <= 1.0);
        assert!((Float::sigmoid(2.0f32) - 0.880797).abs() < 1e-6);
    }

    #[test]
    fn sign0_has_zero_at_origin() {
        assert_eq!(0.0f64.sign0(), 0.0);
        assert_eq!((-3.0f64).sign0(), -1.0);
        assert_eq!(2.0f32.sign0(), 1.0);
    }
}
