//! Scalar abstraction for the geometry code.
//!
//! Affine derivation and mask warping only need field arithmetic plus a way
//! back to integer pixel indices, so they are written once against
//! [`Scalar`] and instantiated for `f32`, `f64` and exact `Ratio<i64>`.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{Num, Signed};

/// Numeric type usable for scale factors and affine coefficients.
pub trait Scalar: Num + Signed + Copy + PartialOrd + Debug + Send + Sync + 'static {
    fn from_i64(v: i64) -> Self;

    /// Best-effort conversion from a float; `None` if the value is not finite.
    fn from_f64(v: f64) -> Option<Self>;

    fn to_f64(self) -> f64;

    /// Largest integer not greater than `self`.
    fn floor_i64(self) -> i64;

    /// Nearest integer, halves rounded up (towards +inf).
    fn round_half_up_i64(self) -> i64 {
        let half = Self::one() / (Self::one() + Self::one());
        (self + half).floor_i64()
    }
}

impl Scalar for f64 {
    fn from_i64(v: i64) -> Self {
        v as f64
    }

    fn from_f64(v: f64) -> Option<Self> {
        v.is_finite().then_some(v)
    }

    fn to_f64(self) -> f64 {
        self
    }

    fn floor_i64(self) -> i64 {
        self.floor() as i64
    }
}

impl Scalar for f32 {
    fn from_i64(v: i64) -> Self {
        v as f32
    }

    fn from_f64(v: f64) -> Option<Self> {
        v.is_finite().then_some(v as f32)
    }

    fn to_f64(self) -> f64 {
        self as f64
    }

    fn floor_i64(self) -> i64 {
        self.floor() as i64
    }
}

impl Scalar for Ratio<i64> {
    fn from_i64(v: i64) -> Self {
        Ratio::from_integer(v)
    }

    fn from_f64(v: f64) -> Option<Self> {
        if !v.is_finite() {
            return None;
        }
        // Exact for the decimal factors users type (1.5, 0.25, ...).
        let denom = 1_000_000i64;
        Some(Ratio::new((v * denom as f64).round() as i64, denom))
    }

    fn to_f64(self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }

    fn floor_i64(self) -> i64 {
        self.floor().to_integer()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_agrees_across_types() {
        for (v, want) in [(2.5, 3), (2.49, 2), (-0.5, 0), (-1.5, -1), (7.0, 7)] {
            assert_eq!(v.round_half_up_i64(), want, "f64 {v}");
            assert_eq!((v as f32).round_half_up_i64(), want, "f32 {v}");
            let r = <Ratio<i64> as Scalar>::from_f64(v).unwrap();
            assert_eq!(r.round_half_up_i64(), want, "ratio {v}");
        }
    }

    #[test]
    fn ratio_from_decimal_is_exact() {
        assert_eq!(<Ratio<i64> as Scalar>::from_f64(1.5), Some(Ratio::new(3, 2)));
        assert_eq!(<Ratio<i64> as Scalar>::from_f64(f64::NAN), None);
    }
}
