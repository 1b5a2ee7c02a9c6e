//! Floating-point abstraction shared by the numeric core.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type the gradient engine, metrics and dynamics are generic over.
///
/// Implemented for `f32` and `f64`. The persisted formats always store
/// 64-bit payloads, so conversions go through [`Scalar::of`] and
/// [`Scalar::to_f64`].
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts from `f64`, saturating to infinities when out of range.
    fn of(x: f64) -> Self {
        Self::from_f64(x).unwrap_or_else(|| {
            if x.is_sign_negative() {
                Self::neg_infinity()
            } else {
                Self::infinity()
            }
        })
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn half() -> Self {
        Self::of(0.5)
    }

    fn two() -> Self {
        Self::of(2.0)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
