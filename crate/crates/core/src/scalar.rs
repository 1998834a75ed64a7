//! Scalar abstraction for the numeric core.
//!
//! Everything numeric in this crate is generic over [`Real`], which bundles the
//! floating-point traits the library relies on (`num-traits` arithmetic,
//! trigonometric constants, FFT compatibility) plus two explicit conversion
//! helpers. `f32` and `f64` are the two instantiations.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, RemAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rustfft::FftNum;

/// Floating-point scalar usable throughout the crate.
///
/// The conversion helpers exist because literal-heavy numeric code reads much
/// better as `T::of(0.5)` than through the fallible `FromPrimitive` interface.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + FftNum
    + AddAssign
    + RemAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum<Self>
    + Display
    + Debug
{
    /// Converts from `f64`, rounding to the nearest representable value.
    fn of(value: f64) -> Self;

    /// Widens to `f64` exactly (both instantiations embed into `f64`).
    fn to_f64_value(self) -> f64;

    /// Converts from `usize`, rounding to the nearest representable value.
    fn of_usize(value: usize) -> Self {
        Self::of(value as f64)
    }

    /// Two pi, the full circle.
    fn tau() -> Self {
        Self::PI() + Self::PI()
    }
}

impl Real for f32 {
    fn of(value: f64) -> Self {
        value as f32
    }

    fn to_f64_value(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    fn of(value: f64) -> Self {
        value
    }

    fn to_f64_value(self) -> f64 {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip<T: Real>(x: f64) -> f64 {
        T::of(x).to_f64_value()
    }

    #[test]
    fn conversions_are_exact_for_f64() {
        for &x in &[0.0, -1.5, 3.25e-9, 1.0e12] {
            assert_eq!(roundtrip::<f64>(x), x);
        }
    }

    #[test]
    fn conversions_round_for_f32() {
        assert_eq!(roundtrip::<f32>(0.5), 0.5);
        assert!((roundtrip::<f32>(0.1) - 0.1).abs() < 1e-8);
    }

    #[test]
    fn tau_is_two_pi() {
        assert_eq!(f64::tau(), std::f64::consts::TAU);
    }
}
