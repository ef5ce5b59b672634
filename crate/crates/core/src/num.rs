//! Scalar abstraction shared by every module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar the lattice machinery is generic over (`f32` or `f64`).
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + NumAssign + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only if the target cannot represent finite values.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `tol` widened to what the type can actually resolve.
    #[inline]
    fn tol(tol: f64) -> Self {
        let floor = Self::epsilon() * Self::lit(64.0);
        Self::lit(tol).max(floor)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Conjugate exponent, `p = 1` maps to infinity.
pub fn conjugate<T: Real>(p: T) -> T {
    if p == T::one() {
        T::infinity()
    } else if p.is_infinite() {
        T::one()
    } else {
        p / (p - T::one())
    }
}

pub fn signum0<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// `2^k` computed exactly.
pub fn pow2<T: Real>(k: i32) -> T {
    T::lit(2.0).powi(k)
}
