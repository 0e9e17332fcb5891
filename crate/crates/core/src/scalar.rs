//! Scalar abstraction shared by the numerical modules.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real floating-point scalar: `f32` or `f64`.
///
/// Coefficients, states and norms of every generic routine are expressed in
/// this type. The text formats rely on `LowerExp`/`FromStr` round-tripping,
/// which both primitive floats provide bit-exactly.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + LowerExp
    + FromStr
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64` used for literal constants.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    /// Conversion from an integer count or index.
    fn from_int(n: i64) -> Self {
        Self::from_i64(n).expect("integer representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `2π`.
    fn two_pi() -> Self {
        Self::TAU()
    }

    /// Relative tolerance that is tight for `f64` and still meaningful for
    /// `f32`: the larger of `tol` and `64·ε`.
    fn tol(tol: f64) -> Self {
        Self::lit(tol).max(Self::epsilon() * Self::lit(64.0))
    }
}

impl Real for f32 {}
impl Real for f64 {}
