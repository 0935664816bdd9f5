//! Scalar abstraction shared by every numerical module.
//!
//! All orbit, metric and measure code is written against [`Real`], so the
//! same routines run in `f64` (the default used by the CLI and the
//! acceptance suite) or in `f32` for quick low-precision sweeps.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Real floating-point scalar used throughout the crate.
pub trait Real:
    Float
    + FloatConst
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
    /// Modulus beyond which an orbit point is replaced by the point at infinity.
    fn clamp_radius() -> Self;

    /// Converts an `f64` literal; panics only if the value is not representable
    /// at all (never the case for the finite literals used in this crate).
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f64 {
    #[inline]
    fn clamp_radius() -> Self {
        1e150
    }
}

impl Real for f32 {
    // z^3 must stay finite below the clamp.
    #[inline]
    fn clamp_radius() -> Self {
        1e12
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_radius_cubed_is_finite() {
        assert!(f64::clamp_radius().powi(2).is_finite());
        assert!(f32::clamp_radius().powi(3).is_finite());
    }

    #[test]
    fn literal_round_trip() {
        assert_eq!(f64::lit(0.25), 0.25);
        assert_eq!(f32::lit(0.5), 0.5f32);
        assert_eq!(<f64 as Real>::from_usize_lossy(7).as_f64(), 7.0);
    }
}
