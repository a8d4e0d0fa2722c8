//! Scalar abstraction: all core math is generic over the real scalar type.
//!
//! `f64` is the production type (every documented tolerance assumes it);
//! `f32` builds and is handy for quick smoke sweeps.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar underlying all operators (entries are `Complex<S>`).
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive {}

impl<T> Scalar for T where T: RealField + Copy + FromPrimitive + ToPrimitive {}

/// Lift an `f64` constant into the working scalar type.
#[inline]
pub(crate) fn sc<S: Scalar>(x: f64) -> S {
    S::from_f64(x).expect("scalar constant must be representable")
}

/// `2^{-e}`, exact in binary floating point (down to the subnormal range).
#[inline]
pub(crate) fn half_pow<S: Scalar>(e: u32) -> S {
    sc::<S>(0.5).powi(e as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_pow_is_exact() {
        assert_eq!(half_pow::<f64>(3), 0.125);
        assert_eq!(half_pow::<f64>(1) + half_pow::<f64>(1), 1.0);
        assert_eq!(half_pow::<f32>(7), 1.0 / 128.0);
    }
}
