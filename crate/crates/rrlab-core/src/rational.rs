//! Exact rational scalars and their text renderings.
//!
//! Every quantity in this crate is a `Rat` (arbitrary-precision rational,
//! always in lowest terms with positive denominator). CSV and JSON
//! interfaces carry rationals as `"p/q"` strings next to a 12-significant
//! digit decimal rendering.

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::fmt;

pub type Rat = num_rational::BigRational;

/// Shorthand constructor from machine integers.
pub fn rat(num: i64, den: i64) -> Rat {
    assert!(den != 0, "zero denominator");
    Rat::new(BigInt::from(num), BigInt::from(den))
}

pub fn rint(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// 2^-k as a rational.
pub fn dyadic(k: u32) -> Rat {
    Rat::new(BigInt::one(), BigInt::from(2u8).pow(k))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseRatError(pub String);

impl fmt::Display for ParseRatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid rational literal: {}", self.0)
    }
}

impl std::error::Error for ParseRatError {}

/// Parses `"p/q"` or a bare integer `"p"`.
pub fn parse_rat(s: &str) -> Result<Rat, ParseRatError> {
    let s = s.trim();
    let bad = || ParseRatError(s.to_string());
    match s.split_once('/') {
        Some((num, den)) => {
            let num: BigInt = num.trim().parse().map_err(|_| bad())?;
            let den: BigInt = den.trim().parse().map_err(|_| bad())?;
            if den.is_zero() {
                return Err(bad());
            }
            Ok(Rat::new(num, den))
        }
        None => {
            let num: BigInt = s.parse().map_err(|_| bad())?;
            Ok(Rat::from_integer(num))
        }
    }
}

/// Canonical `"p/q"` rendering; the denominator is always written, so
/// integers come out as `"3/1"` and CSV columns stay uniform.
pub fn format_rat(r: &Rat) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

/// Decimal rendering with 12 significant digits, round half away from zero.
/// Deterministic; used only for human-readable CSV columns.
pub fn format_dec12(r: &Rat) -> String {
    const SIG: usize = 12;
    if r.is_zero() {
        return "0".to_string();
    }
    let neg = r.is_negative();
    let num = r.numer().magnitude().clone();
    let den = r.denom().magnitude().clone();
    // Find exponent e with 10^e <= num/den < 10^(e+1).
    let ten = BigUint::from(10u8);
    let mut e: i64 = 0;
    let mut scaled_num = num.clone();
    let mut scaled_den = den.clone();
    while scaled_num >= scaled_den.clone() * &ten {
        scaled_den *= &ten;
        e += 1;
    }
    while scaled_num < scaled_den {
        scaled_num *= &ten;
        e -= 1;
    }
    // digits = round(num/den * 10^(SIG-1-e)), producing SIG digits.
    let shift = SIG as i64 - 1 - e;
    let (mut n, mut d) = (num, den);
    if shift >= 0 {
        n *= ten.pow(shift as u32);
    } else {
        d *= ten.pow((-shift) as u32);
    }
    let (q, rem) = n.div_rem(&d);
    let mut digits = if &rem * 2u8 >= d { q + 1u8 } else { q }.to_string();
    let mut exp = e;
    if digits.len() > SIG {
        // Rounding overflowed (e.g. 999.. -> 1000..): drop one digit.
        digits.truncate(SIG);
        exp += 1;
    }
    let digits = digits.trim_end_matches('0');
    let digits = if digits.is_empty() { "0" } else { digits };
    let sign = if neg { "-" } else { "" };
    // Plain notation for moderate exponents, scientific otherwise.
    if (-4..12).contains(&exp) {
        let mut out = String::new();
        if exp >= 0 {
            let e = exp as usize;
            if digits.len() > e + 1 {
                out.push_str(&digits[..=e]);
                out.push('.');
                out.push_str(&digits[e + 1..]);
            } else {
                out.push_str(digits);
                out.push_str(&"0".repeat(e + 1 - digits.len()));
            }
        } else {
            out.push_str("0.");
            out.push_str(&"0".repeat((-exp - 1) as usize));
            out.push_str(digits);
        }
        format!("{sign}{out}")
    } else {
        let mut mant = digits.to_string();
        if mant.len() > 1 {
            mant.insert(1, '.');
        }
        format!("{sign}{mant}e{exp}")
    }
}

/// Bit length of the denominator; the construction depth cap compares
/// against this.
pub fn denominator_bits(r: &Rat) -> u64 {
    r.denom().magnitude().bits()
}

pub fn to_f64(r: &Rat) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        // Fall back to a scaled division for extreme magnitudes.
        let n = r.numer().to_f64().unwrap_or(f64::NAN);
        let d = r.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}
