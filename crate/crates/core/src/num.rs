//! Scalar abstraction shared by the numeric kernels (k-means, metrics).
//!
//! Everything numeric in this crate is written against [`Scalar`], which is
//! satisfied by `f32`, `f64` and exact rationals such as
//! [`num_rational::Rational64`]. The exact instantiation is what the
//! brute-force oracles in the test suites compare against.

use std::fmt::Debug;

use num_traits::{FromPrimitive, Num, ToPrimitive};

/// A field-like number usable by the clustering and metric code.
///
/// Only ring operations, division and ordering are required. Square roots
/// are never taken on the generic path; distances are compared squared.
pub trait Scalar:
    Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
    /// Lossless-where-possible conversion from a count.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    /// `false` for NaN / infinities. Exact types are always finite.
    fn is_finite_value(&self) -> bool;
}

impl Scalar for f32 {
    fn is_finite_value(&self) -> bool {
        self.is_finite()
    }
}

impl Scalar for f64 {
    fn is_finite_value(&self) -> bool {
        self.is_finite()
    }
}

impl Scalar for num_rational::Ratio<i64> {
    fn is_finite_value(&self) -> bool {
        true
    }
}

impl Scalar for num_rational::Ratio<i128> {
    fn is_finite_value(&self) -> bool {
        true
    }
}

/// Squared Euclidean distance.
pub fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Rational64;

    #[test]
    fn squared_distance_agrees_across_scalars() {
        let a = [1.0f64, 2.0, 3.0];
        let b = [4.0f64, 6.0, 3.0];
        assert_eq!(squared_distance(&a, &b), 25.0);

        let ra: Vec<Rational64> = [1, 2, 3].iter().map(|&v| Rational64::from_integer(v)).collect();
        let rb: Vec<Rational64> = [4, 6, 3].iter().map(|&v| Rational64::from_integer(v)).collect();
        assert_eq!(squared_distance(&ra, &rb), Rational64::from_integer(25));
    }

    #[test]
    fn finiteness() {
        assert!(!f64::NAN.is_finite_value());
        assert!(!f32::INFINITY.is_finite_value());
        assert!(Rational64::new(1, 3).is_finite_value());
    }
}
