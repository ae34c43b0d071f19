#![allow(dead_code)]

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

/// Exact value of a finite nonnegative `f64` as `mantissa / 2^shift`.
fn dyadic(x: f64) -> (BigUint, u32) {
    assert!(x.is_finite() && x >= 0.0);
    if x == 0.0 {
        return (BigUint::zero(), 0);
    }
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    let (mant, e) = if exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), exp - 1075)
    };
    if e >= 0 {
        (BigUint::from(mant) << e as u32, 0)
    } else {
        (BigUint::from(mant), (-e) as u32)
    }
}

/// Erlang-B by direct summation of `(E^c/c!) / Σ_j E^j/j!` in exact
/// rational arithmetic, with `E` taken as the exact value of the `f64`.
pub fn erlang_b_exact(erlangs: f64, ports: u32) -> BigRational {
    let (m, s) = dyadic(erlangs);
    if m.is_zero() {
        return if ports == 0 {
            BigRational::one()
        } else {
            BigRational::zero()
        };
    }
    // Multiply numerator and denominator by c! · 2^(s·c):
    // term_j = m^j · 2^(s(c-j)) · c!/j!.
    let c = ports as usize;
    let mut denom = BigUint::zero();
    let mut falling = BigUint::one(); // c!/j! for j = c down to 0
    let mut m_pow: Vec<BigUint> = Vec::with_capacity(c + 1);
    let mut acc = BigUint::one();
    for _ in 0..=c {
        m_pow.push(acc.clone());
        acc *= &m;
    }
    for j in (0..=c).rev() {
        let term = (&m_pow[j] * &falling) << (s as usize * (c - j));
        denom += term;
        falling *= BigUint::from(j.max(1) as u64);
    }
    BigRational::new(BigInt::from(m_pow[c].clone()), BigInt::from(denom))
}

pub fn erlang_b_oracle(erlangs: f64, ports: u32) -> f64 {
    erlang_b_exact(erlangs, ports)
        .to_f64()
        .expect("finite ratio")
}

pub fn relative_error(got: f64, want: f64) -> f64 {
    if want == 0.0 {
        got.abs()
    } else {
        ((got - want) / want).abs()
    }
}
