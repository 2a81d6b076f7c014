//! Signed fixed-point numbers embedded in a prime field.

use super::field::Fp;
use crate::error::{Error, Result};

pub const DEFAULT_SCALE_BITS: u32 = 16;

/// `round(x · 2^s)` stored as a field element, negatives as `p - |raw|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedPoint<const P: u64> {
    pub raw: Fp<P>,
    pub scale_bits: u32,
}

/// Largest magnitude (exclusive) a raw value may take in a field of `bits` bits.
pub fn raw_limit(bits: u32) -> i128 {
    1i128 << (bits - 2)
}

/// Scales and rounds half away from zero, failing when the result leaves
/// `(-2^(bits-2), 2^(bits-2))`.
pub fn quantize_raw(x: f64, scale_bits: u32, field_bits: u32) -> Result<i64> {
    if !x.is_finite() {
        return Err(Error::Range(format!("cannot quantize {x}")));
    }
    let scaled = (x * 2f64.powi(scale_bits as i32)).round();
    let limit = raw_limit(field_bits) as f64;
    if scaled.abs() >= limit {
        return Err(Error::Range(format!(
            "{x} needs {} bits at scale 2^{scale_bits}",
            scaled.abs().log2().ceil()
        )));
    }
    Ok(scaled as i64)
}

pub fn dequantize_raw(raw: i64, scale_bits: u32) -> f64 {
    raw as f64 / 2f64.powi(scale_bits as i32)
}

impl<const P: u64> FixedPoint<P> {
    pub fn quantize(x: f64, scale_bits: u32) -> Result<Self> {
        let raw = quantize_raw(x, scale_bits, Fp::<P>::BITS)?;
        Ok(Self {
            raw: Fp::from_i64(raw),
            scale_bits,
        })
    }

    pub fn signed_raw(self) -> i64 {
        self.raw.to_signed() as i64
    }

    pub fn dequantize(self) -> f64 {
        dequantize_raw(self.signed_raw(), self.scale_bits)
    }
}
