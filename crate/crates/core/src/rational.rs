//! Exact rational numbers and the extended rate type.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Arbitrary-precision rational used for capacities, counts and rates.
pub type Rational = BigRational;

pub fn int(v: i64) -> Rational {
    Rational::from_integer(BigInt::from(v))
}

pub fn ratio(p: i64, q: i64) -> Rational {
    Rational::new(BigInt::from(p), BigInt::from(q))
}

/// Parses `"p/q"`, `"7"`, `"0.125"` or `"1.5e-3"` into an exact rational.
pub fn parse_rational(text: &str) -> Result<Rational> {
    let s = text.trim();
    let bad = || Error::Input(format!("`{text}` is not a rational number"));
    if s.is_empty() {
        return Err(bad());
    }
    if let Some((p, q)) = s.split_once('/') {
        let p: BigInt = p.trim().parse().map_err(|_| bad())?;
        let q: BigInt = q.trim().parse().map_err(|_| bad())?;
        if q.is_zero() {
            return Err(Error::Input(format!("`{text}` has a zero denominator")));
        }
        return Ok(Rational::new(p, q));
    }
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(pos) => {
            let e: i32 = s[pos + 1..].parse().map_err(|_| bad())?;
            (&s[..pos], e)
        }
        None => (s, 0),
    };
    let (negative, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (whole, frac) = digits.split_once('.').unwrap_or((digits, ""));
    if whole.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    if !whole.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let joined = format!("{whole}{frac}");
    let mut numer: BigInt = if joined.is_empty() {
        BigInt::zero()
    } else {
        joined.parse().map_err(|_| bad())?
    };
    if negative {
        numer = -numer;
    }
    let scale = exponent - frac.len() as i32;
    let ten = BigInt::from(10);
    let value = if scale >= 0 {
        Rational::from_integer(numer * num_traits::pow(ten, scale as usize))
    } else {
        Rational::new(numer, num_traits::pow(ten, (-scale) as usize))
    };
    Ok(value)
}

/// Reads a rational from a JSON string (`"2/3"`) or number (`2`, `0.5`).
pub fn rational_from_json(value: &serde_json::Value) -> Result<Rational> {
    match value {
        serde_json::Value::String(s) => parse_rational(s),
        serde_json::Value::Number(n) => parse_rational(&n.to_string()),
        other => Err(Error::Input(format!("expected a rational, found {other}"))),
    }
}

/// Exact conversion of a finite float (every finite binary float is rational).
pub fn from_f64(v: f64) -> Result<Rational> {
    Rational::from_float(v).ok_or_else(|| Error::Input(format!("{v} is not finite")))
}

pub fn to_f64(q: &Rational) -> f64 {
    q.to_f64().unwrap_or(f64::NAN)
}

pub fn format_rational(q: &Rational) -> String {
    if q.denom().is_one() {
        q.numer().to_string()
    } else {
        format!("{}/{}", q.numer(), q.denom())
    }
}

/// Serde adapter writing rationals as `"p/q"` strings.
pub mod serde_rational {
    use super::*;

    pub fn serialize<S: Serializer>(q: &Rational, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format_rational(q))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Rational, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        rational_from_json(&v).map_err(serde::de::Error::custom)
    }
}

/// Serde adapter for `Vec<Rational>`.
pub mod serde_rational_vec {
    use super::*;

    pub fn serialize<S: Serializer>(
        qs: &[Rational],
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(qs.iter().map(format_rational))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Vec<Rational>, D::Error> {
        let vs = Vec::<serde_json::Value>::deserialize(d)?;
        vs.iter()
            .map(|v| rational_from_json(v).map_err(serde::de::Error::custom))
            .collect()
    }
}

/// A rate that is either a finite value or `+∞`.
///
/// The infinite rate only appears on the final level of a decomposition, for
/// resources no active user can reach.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Rate<T = Rational> {
    Finite(T),
    Infinite,
}

impl<T> Rate<T> {
    pub fn finite(&self) -> Option<&T> {
        match self {
            Rate::Finite(v) => Some(v),
            Rate::Infinite => None,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Rate::Infinite)
    }

    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> Rate<U> {
        match self {
            Rate::Finite(v) => Rate::Finite(f(v)),
            Rate::Infinite => Rate::Infinite,
        }
    }
}

impl<T: PartialOrd> PartialOrd for Rate<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (Rate::Finite(a), Rate::Finite(b)) => a.partial_cmp(b),
            (Rate::Finite(_), Rate::Infinite) => Some(Ordering::Less),
            (Rate::Infinite, Rate::Finite(_)) => Some(Ordering::Greater),
            (Rate::Infinite, Rate::Infinite) => Some(Ordering::Equal),
        }
    }
}

impl fmt::Display for Rate<Rational> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rate::Finite(q) => f.write_str(&format_rational(q)),
            Rate::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Rate<Rational> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl Serialize for Rate<f64> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Rate::Finite(v) => s.serialize_f64(*v),
            Rate::Infinite => s.serialize_str("inf"),
        }
    }
}
