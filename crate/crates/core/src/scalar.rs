//! Floating-point abstraction shared by every numeric routine in the crate.

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Real scalar type the engine computes in. Implemented for `f32` and `f64`.
///
/// The on-disk index format stores `f32`; `f64` is useful for reference
/// computations and for checking the `f32` paths against a wider type.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Never fails for the implemented types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Sequential dot product. Summation order is fixed (index ascending) so
/// results are reproducible bit-for-bit across runs and thread counts.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
pub fn l2_norm<T: Scalar>(v: &[T]) -> T {
    dot(v, v).sqrt()
}

/// Scales `v` to unit L2 norm in place. A zero vector is left untouched.
#[inline]
pub fn normalize_in_place<T: Scalar>(v: &mut [T]) {
    let norm = l2_norm(v);
    if norm > T::zero() {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_unit_and_zero() {
        let mut v = [3.0f64, 4.0];
        normalize_in_place(&mut v);
        assert_eq!(v, [0.6, 0.8]);

        let mut z = [0.0f32; 3];
        normalize_in_place(&mut z);
        assert_eq!(z, [0.0; 3]);
    }

    #[test]
    fn dot_matches_manual() {
        assert_eq!(dot(&[1.0f32, 2.0, 3.0], &[4.0, 5.0, 6.0]), 32.0);
    }
}
