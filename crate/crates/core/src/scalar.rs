//! Floating-point scalar abstraction shared by every numerical module.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rustfft::FftNum;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar type the transfer-operator machinery is generic over (`f32` or `f64`).
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + FftNum
    + Default
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    /// `2π`.
    #[inline]
    fn two_pi() -> Self {
        Self::TAU()
    }

    /// A requested absolute tolerance, floored at a few ulps of this type.
    ///
    /// `f64` callers get the requested value back; `f32` callers get a
    /// tolerance their precision can actually reach.
    #[inline]
    fn tol(requested: f64) -> Self {
        Self::lit(requested).max(Self::epsilon() * Self::lit(64.0))
    }
}

impl<T> Scalar for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + ToPrimitive
        + FftNum
        + Default
        + Debug
        + Display
        + Serialize
        + DeserializeOwned
        + Send
        + Sync
        + 'static
{
}

/// Wraps `x` into `[0, 1)`.
#[inline]
pub fn wrap_unit<T: Scalar>(x: T) -> T {
    let w = x - x.floor();
    // x slightly below an integer can round up to exactly 1
    if w >= T::one() {
        T::zero()
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_unit_handles_negative_and_edge_values() {
        assert_eq!(wrap_unit(0.75f64), 0.75);
        assert_eq!(wrap_unit(1.5f64), 0.5);
        assert_eq!(wrap_unit(-0.25f64), 0.75);
        assert_eq!(wrap_unit(-1e-20f64), 0.0);
        assert_eq!(wrap_unit(3.0f32), 0.0);
    }

    #[test]
    fn tolerance_floors_at_precision() {
        assert_eq!(f64::tol(1e-13), 1e-13);
        assert!(f32::tol(1e-13) > 1e-6);
    }
}
