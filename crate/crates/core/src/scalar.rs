use std::fmt;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar used throughout the simulator: `f32` or `f64`.
///
/// Linear algebra goes through nalgebra (`RealField`); conversions to and
/// from the `f64` configuration/wire values go through num-traits.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + fmt::Display + fmt::Debug + Send + Sync + 'static
{
    /// Converts an `f64` literal or configuration value.
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 is representable in every Scalar")
    }

    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("Scalar converts to f64")
    }

    fn nan() -> Self {
        Self::lit(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Largest absolute entry, `0` for an empty slice.
pub fn inf_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, x| acc.max(x.abs()))
}

/// Largest absolute difference between two equally long slices.
pub fn max_abs_diff<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc.max((*x - *y).abs()))
}
