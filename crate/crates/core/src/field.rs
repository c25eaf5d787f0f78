//! Arithmetic in a prime field `Z_p`.
//!
//! Values are stored as `u128`, so moduli up to 127 bits are supported. Moduli
//! below 2^64 take a fast multiplication path through a single `u128` product;
//! larger ones fall back to double-and-add.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use thiserror::Error;

use crate::SeededRng;

/// 2^61 - 1, a Mersenne prime.
pub const DEFAULT_PRIME: u128 = (1u128 << 61) - 1;

const MILLER_RABIN_ROUNDS: usize = 64;
const MAX_BITS: u32 = 127;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FieldError {
    #[error("operands belong to different fields (p = {0} vs p = {1})")]
    ModulusMismatch(u128, u128),
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
    #[error("{0} is not prime")]
    NotPrime(u128),
    #[error("modulus {0} must exceed 2^32")]
    TooSmall(u128),
    #[error("modulus must fit in {MAX_BITS} bits")]
    TooLarge,
    #[error("cannot parse modulus {0:?}")]
    Parse(String),
    #[error("encoded element has {got} bytes, expected {expected}")]
    EncodingLength { expected: usize, got: usize },
    #[error("encoded value is not reduced modulo p")]
    Unreduced,
}

/// A prime modulus together with its bit length.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PrimeModulus {
    p: u128,
    bits: u32,
}

impl PrimeModulus {
    /// Validates `p` with 64 rounds of Miller-Rabin and requires `p > 2^32`.
    pub fn new(p: u128) -> Result<Self, FieldError> {
        if p >> MAX_BITS != 0 {
            return Err(FieldError::TooLarge);
        }
        if p <= 1u128 << 32 {
            return Err(FieldError::TooSmall(p));
        }
        if !is_probable_prime(p, MILLER_RABIN_ROUNDS) {
            return Err(FieldError::NotPrime(p));
        }
        Ok(Self::new_unchecked(p))
    }

    /// Builds a modulus without the size or primality checks. Small fields are
    /// handy in tests (p = 7, 97, 101); the caller vouches for primality.
    pub fn new_unchecked(p: u128) -> Self {
        assert!(p >= 2 && p >> MAX_BITS == 0, "modulus out of range");
        Self { p, bits: 128 - p.leading_zeros() }
    }

    pub fn value(&self) -> u128 {
        self.p
    }

    pub fn bit_length(&self) -> u32 {
        self.bits
    }

    /// Width of the canonical big-endian encoding.
    pub fn byte_len(&self) -> usize {
        self.bits.div_ceil(8) as usize
    }

    pub fn zero(&self) -> FieldElement {
        FieldElement { value: 0, modulus: *self }
    }

    pub fn one(&self) -> FieldElement {
        FieldElement { value: 1, modulus: *self }
    }

    /// Reduces an arbitrary integer into the field.
    pub fn element(&self, value: u128) -> FieldElement {
        FieldElement { value: value % self.p, modulus: *self }
    }

    /// Maps a signed integer onto its residue, e.g. `-3` to `p - 3`.
    pub fn element_signed(&self, value: i128) -> FieldElement {
        let r = value.rem_euclid(self.p as i128) as u128;
        FieldElement { value: r, modulus: *self }
    }

    /// Draws a uniform element of `[0, p)`.
    pub fn random(&self, rng: &mut SeededRng) -> FieldElement {
        FieldElement { value: rng.gen_range(0..self.p), modulus: *self }
    }

    pub fn decode(&self, bytes: &[u8]) -> Result<FieldElement, FieldError> {
        let expected = self.byte_len();
        if bytes.len() != expected {
            return Err(FieldError::EncodingLength { expected, got: bytes.len() });
        }
        let value = bytes.iter().fold(0u128, |acc, b| (acc << 8) | u128::from(*b));
        if value >= self.p {
            return Err(FieldError::Unreduced);
        }
        Ok(FieldElement { value, modulus: *self })
    }

    fn add(&self, a: u128, b: u128) -> u128 {
        // a, b < p < 2^127, so the sum cannot overflow.
        let s = a + b;
        if s >= self.p {
            s - self.p
        } else {
            s
        }
    }

    fn sub(&self, a: u128, b: u128) -> u128 {
        if a >= b {
            a - b
        } else {
            self.p - (b - a)
        }
    }

    fn mul(&self, a: u128, b: u128) -> u128 {
        mul_mod(a, b, self.p)
    }
}

impl Default for PrimeModulus {
    fn default() -> Self {
        Self::new_unchecked(DEFAULT_PRIME)
    }
}

impl FromStr for PrimeModulus {
    type Err = FieldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let p: u128 = s.trim().parse().map_err(|_| FieldError::Parse(s.to_string()))?;
        if p == DEFAULT_PRIME {
            return Ok(Self::default());
        }
        Self::new(p)
    }
}

impl fmt::Debug for PrimeModulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PrimeModulus({})", self.p)
    }
}

impl fmt::Display for PrimeModulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.p)
    }
}

/// An element of `Z_p`. Invariant: `value < modulus.value()`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct FieldElement {
    value: u128,
    modulus: PrimeModulus,
}

impl FieldElement {
    pub fn value(&self) -> u128 {
        self.value
    }

    pub fn modulus(&self) -> PrimeModulus {
        self.modulus
    }

    pub fn is_zero(&self) -> bool {
        self.value == 0
    }

    fn check(&self, other: &Self) -> Result<(), FieldError> {
        if self.modulus.p != other.modulus.p {
            return Err(FieldError::ModulusMismatch(self.modulus.p, other.modulus.p));
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Self) -> Result<Self, FieldError> {
        self.check(other)?;
        Ok(Self { value: self.modulus.add(self.value, other.value), modulus: self.modulus })
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self, FieldError> {
        self.check(other)?;
        Ok(Self { value: self.modulus.sub(self.value, other.value), modulus: self.modulus })
    }

    pub fn try_mul(&self, other: &Self) -> Result<Self, FieldError> {
        self.check(other)?;
        Ok(Self { value: self.modulus.mul(self.value, other.value), modulus: self.modulus })
    }

    /// Multiplicative inverse via the extended Euclidean algorithm.
    pub fn inverse(&self) -> Result<Self, FieldError> {
        if self.value == 0 {
            return Err(FieldError::ZeroInverse);
        }
        // Signed Bezout coefficients stay bounded by p in magnitude, so i128
        // suffices for p < 2^127.
        let p = self.modulus.p as i128;
        let (mut r0, mut r1) = (p, self.value as i128);
        let (mut s0, mut s1) = (0i128, 1i128);
        while r1 != 0 {
            let q = r0 / r1;
            (r0, r1) = (r1, r0 - q * r1);
            (s0, s1) = (s1, s0 - q * s1);
        }
        debug_assert_eq!(r0, 1, "modulus is not prime");
        Ok(self.modulus.element_signed(s0))
    }

    pub fn pow(&self, mut exp: u128) -> Self {
        let mut base = *self;
        let mut acc = self.modulus.one();
        while exp > 0 {
            if exp & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            exp >>= 1;
        }
        acc
    }

    /// Canonical big-endian encoding, `ceil(bit_length / 8)` bytes wide.
    pub fn to_bytes(&self) -> Vec<u8> {
        let width = self.modulus.byte_len();
        self.value.to_be_bytes()[16 - width..].to_vec()
    }
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (mod {})", self.value, self.modulus.p)
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

// Operator forms panic on mismatched moduli; use the `try_*` methods where
// operands come from untrusted input.
impl Add for FieldElement {
    type Output = FieldElement;

    fn add(self, rhs: Self) -> Self {
        self.try_add(&rhs).expect("field mismatch")
    }
}

impl Sub for FieldElement {
    type Output = FieldElement;

    fn sub(self, rhs: Self) -> Self {
        self.try_sub(&rhs).expect("field mismatch")
    }
}

impl Mul for FieldElement {
    type Output = FieldElement;

    fn mul(self, rhs: Self) -> Self {
        self.try_mul(&rhs).expect("field mismatch")
    }
}

impl Neg for FieldElement {
    type Output = FieldElement;

    fn neg(self) -> Self {
        self.modulus.zero() - self
    }
}

fn mul_mod(a: u128, b: u128, p: u128) -> u128 {
    if p >> 64 == 0 {
        return (a * b) % p;
    }
    let (mut a, mut b) = (a % p, b % p);
    let mut acc = 0u128;
    while b > 0 {
        if b & 1 == 1 {
            acc = add_mod(acc, a, p);
        }
        a = add_mod(a, a, p);
        b >>= 1;
    }
    acc
}

fn add_mod(a: u128, b: u128, p: u128) -> u128 {
    let s = a + b;
    if s >= p {
        s - p
    } else {
        s
    }
}

fn pow_mod(mut base: u128, mut exp: u128, p: u128) -> u128 {
    let mut acc = 1u128;
    base %= p;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, p);
        }
        base = mul_mod(base, base, p);
        exp >>= 1;
    }
    acc
}

/// Miller-Rabin with `rounds` random bases; a composite survives with
/// probability at most 4^-rounds. Bases come from a fixed-seed stream so the
/// verdict is reproducible.
pub fn is_probable_prime(n: u128, rounds: usize) -> bool {
    if n < 2 {
        return false;
    }
    for small in [2u128, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n == small {
            return true;
        }
        if n.is_multiple_of(small) {
            return false;
        }
    }
    let d_shift = (n - 1).trailing_zeros();
    let d = (n - 1) >> d_shift;
    let mut rng = SeededRng::seed_from_u64(0x005e_ed0f_5e11);
    'witness: for _ in 0..rounds {
        let a = rng.gen_range(2..n - 1);
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..d_shift {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(p: u128) -> PrimeModulus {
        PrimeModulus::new_unchecked(p)
    }

    #[test]
    fn add_wraps_at_modulus() {
        let f = small(7);
        assert_eq!((f.element(3) + f.element(4)).value(), 0);
        let g = PrimeModulus::default();
        assert_eq!((g.element(5) + g.element(5)).value(), 10);
        let x = g.element(123_456_789);
        assert_eq!(g.zero() + x, x);
    }

    #[test]
    fn mul_examples() {
        let f = small(7);
        // brute force: 15 mod 7
        let expected = (3 * 5) % 7;
        assert_eq!((f.element(3) * f.element(5)).value(), expected);
        assert_eq!(expected, 1);
        let g = PrimeModulus::default();
        let m1 = g.element(DEFAULT_PRIME - 1);
        assert_eq!((m1 * m1).value(), 1);
        let x = g.element(987_654_321);
        assert_eq!(g.one() * x, x);
    }

    #[test]
    fn inverse_examples() {
        let f = small(7);
        let brute = (1..7u128).find(|b| (3 * b) % 7 == 1).unwrap();
        assert_eq!(brute, 5);
        assert_eq!(f.element(3).inverse().unwrap().value(), brute);
        assert_eq!(f.one().inverse().unwrap().value(), 1);

        let g = PrimeModulus::default();
        let half = g.element(2).inverse().unwrap();
        assert_eq!(half.value(), DEFAULT_PRIME.div_ceil(2));
        assert_eq!((g.element(2) * half).value(), 1);
        assert_eq!(g.zero().inverse(), Err(FieldError::ZeroInverse));
    }

    #[test]
    fn mismatched_moduli_are_rejected() {
        let a = small(7).element(1);
        let b = small(11).element(1);
        assert_eq!(a.try_add(&b), Err(FieldError::ModulusMismatch(7, 11)));
        assert!(a.try_mul(&b).is_err());
    }

    #[test]
    fn random_is_reproducible_and_reduced() {
        let g = PrimeModulus::default();
        let mut r1 = SeededRng::seed_from_u64(7);
        let mut r2 = SeededRng::seed_from_u64(7);
        let a = (g.random(&mut r1), g.random(&mut r1));
        let b = (g.random(&mut r2), g.random(&mut r2));
        assert_eq!(a, b);
        assert!(a.0.value() < DEFAULT_PRIME && a.1.value() < DEFAULT_PRIME);
    }

    #[test]
    fn random_is_uniform_over_small_field() {
        let f = small(101);
        let mut rng = SeededRng::seed_from_u64(42);
        let draws = 100_000usize;
        let mut counts = [0usize; 101];
        for _ in 0..draws {
            counts[f.random(&mut rng).value() as usize] += 1;
        }
        let expected = draws as f64 / 101.0;
        let sigma = (draws as f64 * (1.0 / 101.0) * (100.0 / 101.0)).sqrt();
        for c in counts {
            assert!((c as f64 - expected).abs() < 5.0 * sigma, "count {c}");
        }
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 100 degrees of freedom; 99.99th percentile is about 160.
        assert!(chi2 < 160.0, "chi2 = {chi2}");
    }

    #[test]
    fn primality() {
        assert!(PrimeModulus::new(DEFAULT_PRIME).is_ok());
        assert!(PrimeModulus::new((1u128 << 89) - 1).is_ok());
        assert!(PrimeModulus::new((1u128 << 127) - 1).is_ok());
        assert_eq!(PrimeModulus::new(u128::MAX), Err(FieldError::TooLarge));
        assert_eq!(PrimeModulus::new(97), Err(FieldError::TooSmall(97)));
        let composite = 4_294_967_311u128 * 3;
        assert_eq!(PrimeModulus::new(composite), Err(FieldError::NotPrime(composite)));
        // Carmichael number
        assert!(!is_probable_prime(561, 64));
        assert!(is_probable_prime(4_294_967_311, 64));
        let parsed: PrimeModulus = "2305843009213693951".parse().unwrap();
        assert_eq!(parsed, PrimeModulus::default());
        assert!("abc".parse::<PrimeModulus>().is_err());
    }

    #[test]
    fn large_modulus_arithmetic() {
        let p = (1u128 << 89) - 1;
        let f = PrimeModulus::new(p).unwrap();
        let a = f.element(p - 2);
        let inv = a.inverse().unwrap();
        assert_eq!((a * inv).value(), 1);
        assert_eq!((f.element(p - 1) * f.element(p - 1)).value(), 1);
        assert_eq!(a.to_bytes().len(), 12);
    }

    #[test]
    fn encoding_width_and_rejects() {
        let g = PrimeModulus::default();
        let x = g.element(0x0102_0304);
        let bytes = x.to_bytes();
        assert_eq!(bytes.len(), 8);
        assert_eq!(&bytes[4..], &[1, 2, 3, 4]);
        assert_eq!(g.decode(&bytes).unwrap(), x);
        assert!(matches!(g.decode(&bytes[1..]), Err(FieldError::EncodingLength { .. })));
        assert_eq!(g.decode(&[0xff; 8]), Err(FieldError::Unreduced));
    }
}
