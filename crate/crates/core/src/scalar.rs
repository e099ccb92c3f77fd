//! Scalar abstraction for the numeric core.
//!
//! All math is written against [`Scalar`] so the same code runs in `f32` or
//! `f64`. The experiments pin `f64` (see [`crate::Real`]); `f32` exists for
//! callers that trade precision for memory.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, NumCast};
use serde::{de::DeserializeOwned, Serialize};

/// Floating-point scalar usable throughout the crate.
///
/// Beyond `num_traits::Float`, this requires conversions from primitive
/// literals, compound assignment, serde support for checkpoints, and the
/// thread-safety bounds the solvers assume.
pub trait Scalar:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Display
    + Debug
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; exact for `f64` itself.
    fn from_f64(x: f64) -> Self {
        <Self as NumCast>::from(x).expect("finite f64 converts to any Scalar")
    }

    /// Conversion from `usize` counts (sample sizes, step indices).
    fn from_usize(n: usize) -> Self {
        <Self as NumCast>::from(n).expect("usize converts to any Scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    fn machine_eps<F: Scalar>() -> F {
        F::epsilon()
    }

    #[test]
    fn impls_cover_both_widths() {
        assert!(machine_eps::<f32>() > 0.0);
        assert!(machine_eps::<f64>() > 0.0);
        assert_eq!(f64::from_f64(0.25), 0.25);
        assert_eq!(f32::from_f64(0.25), 0.25f32);
        assert_eq!(f64::from_usize(7), 7.0);
    }
}
