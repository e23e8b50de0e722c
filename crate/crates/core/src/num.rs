//! Scalar abstraction so the numeric stack can run in f32 (the training
//! precision) or f64 (used by the tight gradient-validation tests).

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable throughout the tensor and model code.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an f64 constant into the active scalar type.
///
/// Panics only if the target type cannot represent any f64 at all, which
/// cannot happen for the two implementors above.
#[inline]
pub fn s<S: Scalar>(x: f64) -> S {
    S::from_f64(x).expect("f64 -> scalar conversion")
}

/// Converts a scalar back to f64 for reporting and metric accumulation.
#[inline]
pub fn to_f64<S: Scalar>(x: S) -> f64 {
    x.to_f64().expect("scalar -> f64 conversion")
}
