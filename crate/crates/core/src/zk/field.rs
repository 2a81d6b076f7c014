//! Prime fields with a compile-time modulus below 2^64.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use rand::Rng;

/// 2^61 - 1.
pub const MERSENNE_61: u64 = (1 << 61) - 1;
/// 2^64 - 2^32 + 1.
pub const GOLDILOCKS: u64 = 0xFFFF_FFFF_0000_0001;

/// Bit length of `p`.
pub const fn modulus_bits(p: u64) -> u32 {
    64 - p.leading_zeros()
}

/// Element of Z/PZ, always stored reduced.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Fp<const P: u64>(u64);

impl<const P: u64> Fp<P> {
    pub const MODULUS: u64 = P;
    pub const BITS: u32 = modulus_bits(P);

    pub const fn zero() -> Self {
        Self(0)
    }

    pub const fn one() -> Self {
        Self(1)
    }

    pub fn new(v: u64) -> Self {
        Self(v % P)
    }

    /// Maps a signed integer to its residue; negatives become `p - |v|`.
    pub fn from_i128(v: i128) -> Self {
        Self(v.rem_euclid(i128::from(P)) as u64)
    }

    pub fn from_i64(v: i64) -> Self {
        Self::from_i128(i128::from(v))
    }

    pub fn value(self) -> u64 {
        self.0
    }

    /// Representative in `(-p/2, p/2]`.
    pub fn to_signed(self) -> i128 {
        let v = i128::from(self.0);
        if self.0 > P / 2 {
            v - i128::from(P)
        } else {
            v
        }
    }

    pub fn pow(self, mut e: u64) -> Self {
        let mut base = self;
        let mut acc = Self::one();
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            e >>= 1;
        }
        acc
    }

    /// Multiplicative inverse by Fermat; `None` for zero.
    pub fn inverse(self) -> Option<Self> {
        (self.0 != 0).then(|| self.pow(P - 2))
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self(rng.random_range(0..P))
    }
}

impl<const P: u64> Add for Fp<P> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self(((u128::from(self.0) + u128::from(o.0)) % u128::from(P)) as u64)
    }
}

impl<const P: u64> Sub for Fp<P> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl<const P: u64> Neg for Fp<P> {
    type Output = Self;
    fn neg(self) -> Self {
        if self.0 == 0 {
            self
        } else {
            Self(P - self.0)
        }
    }
}

impl<const P: u64> Mul for Fp<P> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self(((u128::from(self.0) * u128::from(o.0)) % u128::from(P)) as u64)
    }
}

impl<const P: u64> fmt::Debug for Fp<P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fp({})", self.0)
    }
}

impl<const P: u64> fmt::Display for Fp<P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
