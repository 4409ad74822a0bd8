//! Number types the allocation machinery can run on.
//!
//! Exact work uses [`Rational`]; finite-difference Jacobians and other
//! numerical checks evaluate the same code paths on `f64`.

use std::fmt::Debug;

use num_traits::{FromPrimitive, Num, Signed};

use crate::rational::{self, Rational};

pub trait Scalar: Num + Signed + Clone + PartialOrd + Debug + FromPrimitive {
    fn from_rational(q: &Rational) -> Self;

    fn to_f64(&self) -> f64;

    /// Whether two candidate rates count as the same minimum.
    ///
    /// Exact for rationals. Floats use a relative tolerance so that sets
    /// which tie analytically are still merged into one level.
    fn ties(&self, other: &Self) -> bool;

    fn from_u64(v: u64) -> Self {
        <Self as FromPrimitive>::from_u64(v).expect("u64 fits every scalar")
    }
}

impl Scalar for Rational {
    fn from_rational(q: &Rational) -> Self {
        q.clone()
    }

    fn to_f64(&self) -> f64 {
        rational::to_f64(self)
    }

    fn ties(&self, other: &Self) -> bool {
        self == other
    }
}

impl Scalar for f64 {
    fn from_rational(q: &Rational) -> Self {
        rational::to_f64(q)
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn ties(&self, other: &Self) -> bool {
        (self - other).abs() <= 1e-12 * self.abs().max(other.abs()).max(1e-300)
    }
}
