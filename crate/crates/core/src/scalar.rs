//! Scalar abstraction shared by every numerical routine in the crate.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};

/// Floating point scalar: `f32` or `f64`.
///
/// Everything numeric in the crate is written against this trait. Literal
/// constants go through [`lit`], diagnostics leave through [`Scalar::to_f64_lossy`].
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Display + Debug + Send + Sync + 'static
{
    /// Machine epsilon of the concrete type.
    fn machine_epsilon() -> Self;

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    fn machine_epsilon() -> Self {
        f64::EPSILON
    }
}

impl Scalar for f32 {
    fn machine_epsilon() -> Self {
        f32::EPSILON
    }
}

/// Converts an `f64` literal into the working scalar type.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("literal representable in scalar type")
}

#[inline]
pub fn from_usize<T: Scalar>(n: usize) -> T {
    T::from_usize(n).expect("integer representable in scalar type")
}
