//! Exact rational helpers shared across modules.

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde_json::{json, Value};

pub type Q = num_rational::BigRational;

pub fn q(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn qi(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

/// `base^e` for a possibly negative exponent.
pub fn qpow(base: &Q, e: i64) -> Q {
    if e >= 0 {
        num_traits::pow(base.clone(), e as usize)
    } else {
        num_traits::pow(base.recip(), (-e) as usize)
    }
}

pub fn pow2(e: i64) -> Q {
    qpow(&qi(2), e)
}

pub fn pow3(e: i64) -> Q {
    qpow(&qi(3), e)
}

/// Float approximation that survives numerators and denominators beyond f64 range.
pub fn to_f64(x: &Q) -> f64 {
    if let (Some(n), Some(d)) = (x.numer().to_f64(), x.denom().to_f64()) {
        if n.is_finite() && d.is_finite() && d != 0.0 {
            return n / d;
        }
    }
    let shift = x.numer().bits().max(x.denom().bits()) as i64 - 512;
    let n = if shift > 0 { x.numer() >> shift as usize } else { x.numer().clone() };
    let d = if shift > 0 { x.denom() >> shift as usize } else { x.denom().clone() };
    match (n.to_f64(), d.to_f64()) {
        (Some(n), Some(d)) if d != 0.0 => n / d,
        _ => {
            let lb = x.numer().bits() as f64 - x.denom().bits() as f64;
            let sign = if x.is_negative() { -1.0 } else { 1.0 };
            sign * 2f64.powf(lb)
        }
    }
}

/// Exact rational for a finite float (every finite f64 is a dyadic rational).
pub fn from_f64(x: f64) -> Q {
    Q::from_float(x).unwrap_or_else(Q::zero)
}

pub fn to_json(x: &Q) -> Value {
    json!({ "num": x.numer().to_string(), "den": x.denom().to_string() })
}

/// Integer square root when `x` is the square of a rational.
pub fn rational_sqrt(x: &Q) -> Option<Q> {
    if x.is_negative() {
        return None;
    }
    let n = x.numer().sqrt();
    let d = x.denom().sqrt();
    if &n * &n == *x.numer() && &d * &d == *x.denom() {
        Some(Q::new(n, d))
    } else {
        None
    }
}

pub fn factorial(n: u64) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, k| acc * BigInt::from(k))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn helpers() {
        assert_eq!(pow3(-5), q(1, 243));
        assert_eq!(pow2(6), qi(64));
        assert_eq!(rational_sqrt(&q(9, 16)), Some(q(3, 4)));
        assert_eq!(rational_sqrt(&q(2, 1)), None);
        assert_eq!(to_json(&q(244, 15552))["num"], "61");
        let tiny = pow3(-900);
        assert!(to_f64(&tiny) == 0.0 || to_f64(&tiny) < 1e-300);
        let big = pow3(700) / pow3(690);
        assert!((to_f64(&big) - 59049.0).abs() < 1e-6);
        assert_eq!(from_f64(0.5), q(1, 2));
    }
}
