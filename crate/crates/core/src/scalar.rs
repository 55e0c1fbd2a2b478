// SPDX-License-Identifier: MIT OR Apache-2.0

//! Scalar abstraction shared by the tensor runtime and the statistics code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point element type of every tensor: `f32` or `f64`.
pub trait Scalar:
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
    /// Converts an `f64` literal, rounding to the nearest representable value.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    fn to_f64_lossless(self) -> f64 {
        self.to_f64().expect("finite scalar converts to f64")
    }

    /// Gauss error function.
    fn erf(self) -> Self;

    /// Stable name used in error messages and archive headers.
    const DTYPE: &'static str;
}

impl Scalar for f32 {
    fn erf(self) -> Self {
        libm::erff(self)
    }
    const DTYPE: &'static str = "f32";
}

impl Scalar for f64 {
    fn erf(self) -> Self {
        libm::erf(self)
    }
    const DTYPE: &'static str = "f64";
}
