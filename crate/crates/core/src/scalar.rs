//! Scalar abstractions.
//!
//! Stencil arithmetic and Sobolev sums only need a commutative ring with
//! exact rational constants, so they are generic over [`Scalar`], which is
//! implemented for `f32`, `f64` and `Ratio<i64>`. Linear solvers need square
//! roots and comparisons against tolerances and use [`Real`].

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, Neg, SubAssign};

use num_rational::Ratio;
use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

/// Ring element with exact small rational constants.
pub trait Scalar:
    Num + Copy + Neg<Output = Self> + AddAssign + SubAssign + MulAssign + PartialOrd + Debug + Send + Sync + 'static
{
    /// `num / den` represented in this scalar type.
    fn from_ratio(num: i64, den: i64) -> Self;

    /// Lossy conversion used for reporting.
    fn to_f64_lossy(self) -> f64;

    fn abs_val(self) -> Self {
        if self < Self::zero() {
            -self
        } else {
            self
        }
    }
}

/// Floating point scalar for solvers.
pub trait Real: Scalar + Float + FromPrimitive + ToPrimitive + Sum {
    fn from_f64(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 converts")
    }
    fn from_usize(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).expect("usize converts")
    }
}

macro_rules! impl_float_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            #[inline]
            fn from_ratio(num: i64, den: i64) -> Self {
                num as $t / den as $t
            }
            #[inline]
            fn to_f64_lossy(self) -> f64 {
                self as f64
            }
        }
        impl Real for $t {}
    };
}

impl_float_scalar!(f32);
impl_float_scalar!(f64);

impl Scalar for Ratio<i64> {
    fn from_ratio(num: i64, den: i64) -> Self {
        Ratio::new(num, den)
    }
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_constants_are_exact() {
        let third = <Ratio<i64> as Scalar>::from_ratio(1, 3);
        assert_eq!(third + third + third, Ratio::from_integer(1));
        assert_eq!(<f64 as Scalar>::from_ratio(3, 2), 1.5);
        assert_eq!((-third).abs_val(), third);
    }
}
