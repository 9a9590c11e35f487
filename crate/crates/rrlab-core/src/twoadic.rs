//! Exact dyadic-digit arithmetic for odometer translations.
//!
//! A point `x` in `[0, 1)` with binary digits `d_0 d_1 ...` is identified
//! with the 2-adic integer `xi = sum d_i 2^i`. Rational points have
//! eventually periodic digits, so `xi` is a rational with odd denominator
//! and the translation `x -> x + gamma` (2-adic addition) is exactly
//! computable for any rational `gamma` with odd denominator. This is the
//! graph map behind the two-adic self-joining family.

use crate::rational::Rat;
use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use std::collections::HashMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvenDenominator(pub Rat);

impl fmt::Display for EvenDenominator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} is not a 2-adic integer (even denominator)",
            crate::rational::format_rat(&self.0)
        )
    }
}

impl std::error::Error for EvenDenominator {}

fn require_odd_denominator(gamma: &Rat) -> Result<(), EvenDenominator> {
    if gamma.denom().is_even() {
        Err(EvenDenominator(gamma.clone()))
    } else {
        Ok(())
    }
}

/// The unique `m` in `[0, 2^k)` with `denom(gamma) * m == numer(gamma)
/// (mod 2^k)`; the power of the adding machine that agrees with the
/// `gamma`-translation on the first `k` digits.
pub fn two_adic_shift_mod(gamma: &Rat, k: u32) -> Result<BigUint, EvenDenominator> {
    require_odd_denominator(gamma)?;
    let modulus = BigInt::one() << k;
    let inv = mod_inverse_odd(gamma.denom(), &modulus);
    let m = (gamma.numer() * inv).mod_floor(&modulus);
    Ok(m.magnitude().clone())
}

/// Inverse of an odd integer modulo 2^k via the extended Euclid identity.
fn mod_inverse_odd(a: &BigInt, modulus: &BigInt) -> BigInt {
    let e = a.extended_gcd(modulus);
    debug_assert!(e.gcd.is_one(), "inverse requires odd argument");
    e.x.mod_floor(modulus)
}

/// Binary expansion of `x` in `[0, 1)`: pre-periodic digits and the
/// repeating block (most significant digit first in time order `d_0, d_1, ...`).
pub fn binary_expansion(x: &Rat) -> (Vec<bool>, Vec<bool>) {
    assert!(
        !x.is_negative() && *x < Rat::one(),
        "expansion domain is [0, 1)"
    );
    let mut seen: HashMap<Rat, usize> = HashMap::new();
    let mut digits: Vec<bool> = Vec::new();
    let mut cur = x.clone();
    loop {
        if let Some(&at) = seen.get(&cur) {
            let period = digits.split_off(at);
            return (digits, period);
        }
        seen.insert(cur.clone(), digits.len());
        let doubled = &cur * Rat::from_integer(2.into());
        let bit = doubled >= Rat::one();
        digits.push(bit);
        cur = if bit { doubled - Rat::one() } else { doubled };
    }
}

/// `xi(x)`: the 2-adic integer reading of the digit stream, as a rational
/// with odd denominator.
pub fn to_two_adic(x: &Rat) -> Rat {
    let (pre, period) = binary_expansion(x);
    let mut head = BigInt::zero();
    for (i, d) in pre.iter().enumerate() {
        if *d {
            head += BigInt::one() << i;
        }
    }
    let mut block = BigInt::zero();
    for (i, d) in period.iter().enumerate() {
        if *d {
            block += BigInt::one() << i;
        }
    }
    // sum_{j>=0} 2^{jL} = 1/(1 - 2^L) in Z_2, so the tail contributes
    // -2^a * block / (2^L - 1).
    let l = period.len() as u32;
    let tail_den = (BigInt::one() << l) - BigInt::one();
    let tail = Rat::new(-(block << pre.len()), tail_den);
    Rat::from_integer(head) + tail
}

/// Real point of a 2-adic rational integer: extracts the digit stream
/// (eventually periodic) and evaluates it in `[0, 1)`. The all-ones tail
/// evaluates to 1 and is wrapped to 0, a null-set convention.
pub fn from_two_adic(xi: &Rat) -> Rat {
    assert!(xi.denom().is_odd(), "2-adic integers need odd denominators");
    let mut seen: HashMap<Rat, usize> = HashMap::new();
    let mut digits: Vec<bool> = Vec::new();
    let mut cur = xi.clone();
    let (pre, period) = loop {
        if let Some(&at) = seen.get(&cur) {
            let period = digits.split_off(at);
            break (digits, period);
        }
        seen.insert(cur.clone(), digits.len());
        // Digit = 2-adic residue mod 2; for odd v the parity of u/v is the
        // parity of u.
        let bit = cur.numer().is_odd();
        digits.push(bit);
        let adj = if bit { &cur - Rat::one() } else { cur.clone() };
        cur = adj / Rat::from_integer(2.into());
    };
    let mut value = Rat::zero();
    let half = Rat::new(BigInt::one(), BigInt::from(2));
    let mut place = half.clone();
    for d in &pre {
        if *d {
            value += &place;
        }
        place *= &half;
    }
    // Periodic tail p_0..p_{L-1}: worth V/(2^L - 1) scaled to its position,
    // with V the block read most-significant-first.
    let l = period.len() as u32;
    let mut block = BigInt::zero();
    for (i, d) in period.iter().enumerate() {
        if *d {
            block += BigInt::one() << (l as usize - 1 - i);
        }
    }
    let tail = Rat::new(block, (BigInt::one() << l) - BigInt::one());
    value += tail * Rat::new(BigInt::one(), BigInt::one() << pre.len());
    if value >= Rat::one() {
        value -= Rat::one();
    }
    value
}

/// The translation `x -> x + gamma` in 2-adic digit arithmetic, exact on
/// rational points.
pub fn translate_point(x: &Rat, gamma: &Rat) -> Result<Rat, EvenDenominator> {
    require_odd_denominator(gamma)?;
    Ok(from_two_adic(&(to_two_adic(x) + gamma)))
}
