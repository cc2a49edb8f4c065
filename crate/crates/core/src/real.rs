//! Scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point scalar the mapping and learning code is generic over.
///
/// Implemented for `f32` and `f64`. Oracle-grade tests run in `f64`; the
/// online pipeline can run in `f32` to halve map memory.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal, panicking only if the target cannot hold it.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_count(n: u64) -> Self {
        Self::from_u64(n).expect("count representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Logistic function.
#[inline]
pub fn logistic<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Log-odds of a probability.
#[inline]
pub fn log_odds<T: Real>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

pub type Vec3<T> = [T; 3];

#[inline]
pub(crate) fn all_finite<T: Real>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_inverts_log_odds() {
        for &p in &[0.1f64, 0.3, 0.5, 0.75, 0.99] {
            assert!((logistic(log_odds(p)) - p).abs() < 1e-12);
        }
        assert_eq!(logistic(0.0f32), 0.5);
    }
}
