//! Shamir sharing over `Z_p` and the local gate algebra of BGW.
//!
//! A secret is the constant term of a random degree-`t` polynomial; party `i`
//! holds the evaluation at `x = i`. Addition of shares is local. Multiplying
//! two shares pointwise yields a point on a degree-`2t` polynomial, which is
//! brought back to degree `t` by resharing it and recombining the received
//! sub-shares with the Lagrange-at-zero coefficients from
//! [`reduction_coefficients`].

use std::collections::BTreeSet;

use thiserror::Error;

use crate::field::{FieldElement, FieldError, PrimeModulus};
use crate::SeededRng;

/// Wire size of the share header: 1 byte x, 4 byte session tag, 2 byte round.
pub const SHARE_HEADER_LEN: usize = 1 + 4 + 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SharingError {
    #[error("invalid threshold configuration n = {n}, t = {t}: need n >= 3, t >= 1, 2t < n, n <= 255")]
    InvalidConfig { n: usize, t: usize },
    #[error("duplicate share point x = {0}")]
    DuplicatePoint(u8),
    #[error("share point x = 0 is reserved for the secret")]
    ZeroPoint,
    #[error("need at least {need} shares, got {got}")]
    TooFewShares { need: usize, got: usize },
    #[error("shares lie at different points (x = {0} and x = {1})")]
    PointMismatch(u8, u8),
    #[error("malformed share encoding: {0}")]
    Encoding(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Party count `n` and polynomial degree `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ThresholdConfig {
    n: usize,
    t: usize,
}

impl ThresholdConfig {
    pub fn new(n: usize, t: usize) -> Result<Self, SharingError> {
        // x is carried in a single byte on the wire.
        if n < 3 || t < 1 || 2 * t >= n || n > 255 {
            return Err(SharingError::InvalidConfig { n, t });
        }
        Ok(Self { n, t })
    }

    /// `t = floor((n - 1) / 2)`, the largest threshold that still permits
    /// multiplication.
    pub fn with_default_threshold(n: usize) -> Result<Self, SharingError> {
        Self::new(n, n.saturating_sub(1) / 2)
    }

    pub fn parties(&self) -> usize {
        self.n
    }

    pub fn threshold(&self) -> usize {
        self.t
    }
}

/// A polynomial of degree at most `t`; `coefficients[0]` is the secret.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SharePolynomial {
    coefficients: Vec<FieldElement>,
}

impl SharePolynomial {
    /// Secret as constant term, `t` uniformly random higher coefficients.
    pub fn random(secret: FieldElement, t: usize, rng: &mut SeededRng) -> Self {
        let modulus = secret.modulus();
        let mut coefficients = Vec::with_capacity(t + 1);
        coefficients.push(secret);
        coefficients.extend((0..t).map(|_| modulus.random(rng)));
        Self { coefficients }
    }

    pub fn from_coefficients(coefficients: Vec<FieldElement>) -> Self {
        assert!(!coefficients.is_empty(), "polynomial needs a constant term");
        Self { coefficients }
    }

    pub fn degree_bound(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn coefficients(&self) -> &[FieldElement] {
        &self.coefficients
    }

    pub fn secret(&self) -> FieldElement {
        self.coefficients[0]
    }

    /// Horner evaluation.
    pub fn evaluate(&self, x: FieldElement) -> FieldElement {
        self.coefficients
            .iter()
            .rev()
            .fold(x.modulus().zero(), |acc, c| acc * x + *c)
    }

    /// Shares for parties `1..=n`.
    pub fn shares(&self, n: usize, session_tag: u32) -> Vec<Share> {
        let modulus = self.secret().modulus();
        (1..=n)
            .map(|i| Share {
                x: i as u8,
                y: self.evaluate(modulus.element(i as u128)),
                session_tag,
            })
            .collect()
    }
}

/// Party `x`'s point on a sharing polynomial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Share {
    pub x: u8,
    pub y: FieldElement,
    pub session_tag: u32,
}

impl Share {
    pub fn new(x: u8, y: FieldElement, session_tag: u32) -> Result<Self, SharingError> {
        if x == 0 {
            return Err(SharingError::ZeroPoint);
        }
        Ok(Self { x, y, session_tag })
    }

    pub fn encoded_len(modulus: &PrimeModulus) -> usize {
        SHARE_HEADER_LEN + modulus.byte_len()
    }

    /// `x (1) || y (ceil(bits/8), big-endian) || session tag (4, BE) || round (2, BE)`.
    pub fn encode(&self, round: u16, out: &mut Vec<u8>) {
        out.push(self.x);
        out.extend_from_slice(&self.y.to_bytes());
        out.extend_from_slice(&self.session_tag.to_be_bytes());
        out.extend_from_slice(&round.to_be_bytes());
    }

    /// Decodes one share from the front of `bytes`, returning it with its
    /// round index and the unread remainder.
    pub fn decode<'a>(
        bytes: &'a [u8],
        modulus: &PrimeModulus,
    ) -> Result<(Share, u16, &'a [u8]), SharingError> {
        let width = modulus.byte_len();
        let len = SHARE_HEADER_LEN + width;
        if bytes.len() < len {
            return Err(SharingError::Encoding(format!(
                "need {len} bytes, have {}",
                bytes.len()
            )));
        }
        let x = bytes[0];
        if x == 0 {
            return Err(SharingError::ZeroPoint);
        }
        let y = modulus.decode(&bytes[1..1 + width])?;
        let tag_at = 1 + width;
        let session_tag = u32::from_be_bytes(bytes[tag_at..tag_at + 4].try_into().unwrap());
        let round = u16::from_be_bytes(bytes[tag_at + 4..len].try_into().unwrap());
        Ok((Share { x, y, session_tag }, round, &bytes[len..]))
    }
}

/// Splits `secret` into `n` shares of a fresh random degree-`t` polynomial.
pub fn share_secret(secret: FieldElement, cfg: &ThresholdConfig, rng: &mut SeededRng) -> Vec<Share> {
    SharePolynomial::random(secret, cfg.t, rng).shares(cfg.n, 0)
}

/// Lagrange coefficients for evaluating at `at` the polynomial through the
/// points with abscissae `xs`.
pub fn lagrange_coefficients(
    xs: &[FieldElement],
    at: FieldElement,
) -> Result<Vec<FieldElement>, SharingError> {
    let mut coefficients = Vec::with_capacity(xs.len());
    for (i, xi) in xs.iter().enumerate() {
        let mut num = at.modulus().one();
        let mut den = at.modulus().one();
        for (j, xj) in xs.iter().enumerate() {
            if i != j {
                num = num * (at - *xj);
                den = den * (*xi - *xj);
            }
        }
        coefficients.push(num * den.inverse()?);
    }
    Ok(coefficients)
}

/// Interpolates the value at `at` of the polynomial through `points`.
pub fn interpolate(points: &[(FieldElement, FieldElement)], at: FieldElement) -> Result<FieldElement, SharingError> {
    let xs: Vec<_> = points.iter().map(|(x, _)| *x).collect();
    let lambdas = lagrange_coefficients(&xs, at)?;
    Ok(points
        .iter()
        .zip(&lambdas)
        .fold(at.modulus().zero(), |acc, ((_, y), l)| acc + *y * *l))
}

/// Recovers the secret from at least `t + 1` shares with distinct points.
pub fn reconstruct(shares: &[Share], cfg: &ThresholdConfig) -> Result<FieldElement, SharingError> {
    let need = cfg.t + 1;
    if shares.len() < need {
        return Err(SharingError::TooFewShares { need, got: shares.len() });
    }
    let mut seen = BTreeSet::new();
    for s in shares {
        if s.x == 0 {
            return Err(SharingError::ZeroPoint);
        }
        if !seen.insert(s.x) {
            return Err(SharingError::DuplicatePoint(s.x));
        }
    }
    let modulus = shares[0].y.modulus();
    let points: Vec<_> = shares
        .iter()
        .map(|s| (modulus.element(u128::from(s.x)), s.y))
        .collect();
    interpolate(&points, modulus.zero())
}

/// Pointwise sum; no communication.
pub fn local_add(a: &Share, b: &Share) -> Result<Share, SharingError> {
    if a.x != b.x {
        return Err(SharingError::PointMismatch(a.x, b.x));
    }
    Ok(Share { x: a.x, y: a.y.try_add(&b.y)?, session_tag: a.session_tag })
}

/// Pointwise product. The result lies on a degree-`2t` polynomial and must be
/// degree-reduced before it feeds another multiplication.
pub fn local_mul_raw(a: &Share, b: &Share) -> Result<Share, SharingError> {
    if a.x != b.x {
        return Err(SharingError::PointMismatch(a.x, b.x));
    }
    Ok(Share { x: a.x, y: a.y.try_mul(&b.y)?, session_tag: a.session_tag })
}

/// `λ_1..λ_n` with `Σ λ_i Q(i) = Q(0)` for every `Q` of degree below `n`.
pub fn reduction_coefficients(
    cfg: &ThresholdConfig,
    modulus: &PrimeModulus,
) -> Result<Vec<FieldElement>, SharingError> {
    if 2 * cfg.t >= cfg.n {
        return Err(SharingError::InvalidConfig { n: cfg.n, t: cfg.t });
    }
    let xs: Vec<_> = (1..=cfg.n).map(|i| modulus.element(i as u128)).collect();
    lagrange_coefficients(&xs, modulus.zero())
}

/// Degree reduction, first half: reshare a raw product share at degree `t`.
/// Element `j` of the result goes to party `j + 1`.
pub fn reshare(raw: &Share, cfg: &ThresholdConfig, rng: &mut SeededRng) -> Vec<Share> {
    SharePolynomial::random(raw.y, cfg.t, rng).shares(cfg.n, raw.session_tag)
}

/// Degree reduction, second half: `sub_shares[j]` is the sub-share received
/// from party `j + 1`; all must sit at the receiver's point.
pub fn recombine(
    sub_shares: &[Share],
    lambdas: &[FieldElement],
) -> Result<Share, SharingError> {
    if sub_shares.len() != lambdas.len() {
        return Err(SharingError::TooFewShares { need: lambdas.len(), got: sub_shares.len() });
    }
    let first = sub_shares[0];
    let mut acc = first.y.modulus().zero();
    for (s, l) in sub_shares.iter().zip(lambdas) {
        if s.x != first.x {
            return Err(SharingError::PointMismatch(first.x, s.x));
        }
        acc = acc + s.y * *l;
    }
    Ok(Share { x: first.x, y: acc, session_tag: first.session_tag })
}
