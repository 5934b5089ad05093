//! Scalar abstraction shared by every geometric and statistical routine.
//!
//! Geometry, suppression, linking and metric accumulation are written
//! against [`Scalar`], so the same code runs on `f32`, `f64` and on exact
//! rationals ([`Rational`]). Operations that need `ln`/`exp` (the anchor
//! codec) additionally require [`Real`].

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

/// Exact rational scalar used by oracles and exact metric checks.
pub type Rational = Ratio<i64>;

pub trait Scalar: Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static {
    /// `false` for NaN and infinities. Rationals are always finite.
    fn is_finite_value(self) -> bool;

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count not representable in scalar type")
    }

    /// `num / den` evaluated in the scalar type.
    fn ratio(num: usize, den: usize) -> Self {
        Self::from_count(num) / Self::from_count(den)
    }

    /// Lossy conversion from `f64`; panics only for values the type cannot hold.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("value not representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }

    fn two() -> Self {
        Self::one() + Self::one()
    }
}

impl Scalar for f32 {
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}

impl Scalar for f64 {
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}

impl Scalar for Rational {
    fn is_finite_value(self) -> bool {
        true
    }
}

/// Scalars with transcendental functions.
pub trait Real: Scalar + Float {}

impl<T: Scalar + Float> Real for T {}

/// Descending comparison for scores where incomparable values (NaN) are equal.
pub(crate) fn cmp_desc<T: PartialOrd>(a: &T, b: &T) -> std::cmp::Ordering {
    b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal)
}

pub(crate) fn cmp_asc<T: PartialOrd>(a: &T, b: &T) -> std::cmp::Ordering {
    a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_is_exact_for_rationals() {
        let third = Rational::ratio(1, 3);
        assert_eq!(third * Rational::from_count(3), Rational::from_integer(1));
    }

    #[test]
    fn min_max_work_for_all_scalars() {
        assert_eq!(2.0f32.max_of(3.0), 3.0);
        assert_eq!(2.0f64.min_of(-1.0), -1.0);
        assert_eq!(Rational::new(1, 2).max_of(Rational::new(2, 3)), Rational::new(2, 3));
    }

    #[test]
    fn finiteness() {
        assert!(!f64::NAN.is_finite_value());
        assert!(!f32::INFINITY.is_finite_value());
        assert!(Rational::new(7, 3).is_finite_value());
    }
}
