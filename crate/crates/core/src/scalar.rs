//! Scalar abstraction shared by the exact-capable components (level-set rounding,
//! first-fit, simplex). Floats carry a snapping tolerance, rationals use zero.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive};
use std::fmt::Debug;

pub trait Scalar:
    Num + Signed + Clone + PartialOrd + Debug + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    fn floor(&self) -> Self;
    fn ceil(&self) -> Self;
    /// Distance under which a value is treated as an integer.
    fn snap_tol() -> Self;
    /// Comparison slack for feasibility checks.
    fn cmp_tol() -> Self;

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite value")
    }

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn round_nearest(&self) -> Self {
        let half = Self::from_f64_lossy(0.5);
        (self.clone() + half).floor()
    }

    fn snap(&self) -> Self {
        let r = self.round_nearest();
        if (self.clone() - r.clone()).abs() <= Self::snap_tol() {
            r
        } else {
            self.clone()
        }
    }

    fn is_integral(&self) -> bool {
        self.floor() == *self
    }

    fn max_of(a: Self, b: Self) -> Self {
        if a >= b {
            a
        } else {
            b
        }
    }

    fn min_of(a: Self, b: Self) -> Self {
        if a <= b {
            a
        } else {
            b
        }
    }
}

macro_rules! float_scalar {
    ($t:ty, $snap:expr, $cmp:expr) => {
        impl Scalar for $t {
            fn floor(&self) -> Self {
                <$t>::floor(*self)
            }
            fn ceil(&self) -> Self {
                <$t>::ceil(*self)
            }
            fn snap_tol() -> Self {
                $snap
            }
            fn cmp_tol() -> Self {
                $cmp
            }
        }
    };
}

float_scalar!(f64, 1e-9, 1e-12);
float_scalar!(f32, 1e-5, 1e-6);

impl Scalar for BigRational {
    fn floor(&self) -> Self {
        BigRational::floor(self)
    }
    fn ceil(&self) -> Self {
        BigRational::ceil(self)
    }
    fn snap_tol() -> Self {
        BigRational::from_integer(BigInt::from(0))
    }
    fn cmp_tol() -> Self {
        BigRational::from_integer(BigInt::from(0))
    }
}

/// Neumaier-compensated running sum.
#[derive(Clone, Debug, PartialEq)]
pub struct CompensatedSum<T> {
    sum: T,
    comp: T,
}

impl<T: Scalar> CompensatedSum<T> {
    pub fn new() -> Self {
        Self {
            sum: T::zero(),
            comp: T::zero(),
        }
    }

    pub fn add(&mut self, x: T) {
        let t = self.sum.clone() + x.clone();
        if self.sum.abs() >= x.abs() {
            self.comp = self.comp.clone() + ((self.sum.clone() - t.clone()) + x);
        } else {
            self.comp = self.comp.clone() + ((x - t.clone()) + self.sum.clone());
        }
        self.sum = t;
    }

    pub fn value(&self) -> T {
        self.sum.clone() + self.comp.clone()
    }
}

impl<T: Scalar> Default for CompensatedSum<T> {
    fn default() -> Self {
        Self::new()
    }
}

pub fn ratio(a: i64, b: i64) -> BigRational {
    BigRational::new(BigInt::from(a), BigInt::from(b))
}
