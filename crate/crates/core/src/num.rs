//! Scalar abstraction for the numeric core.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

/// Scalar type every numeric routine in this crate is generic over.
///
/// `f64` is the workhorse; `f32` satisfies the bound but the default
/// tolerances assume double precision.
pub trait Real: Float + FromPrimitive + Sum<Self> + Debug + Display + Default + 'static {}

impl<T> Real for T where T: Float + FromPrimitive + Sum<T> + Debug + Display + Default + 'static {}

/// Lifts an `f64` constant (tolerance, grid bound, ...) into the working scalar.
#[inline]
pub fn cast<S: Real>(x: f64) -> S {
    S::from_f64(x).expect("constant representable in scalar type")
}
