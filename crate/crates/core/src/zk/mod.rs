//! Transparent verification of a detection round.
//!
//! The server quantizes the round's importance segments into a prime field,
//! commits to them, and records every step of the detection computation as a
//! gadget (inner products, Freivalds-checked Gram matrix, integer square
//! roots, quotient/remainder divisions, threshold comparisons). A client
//! replays the records against the committed vectors and accepts only if the
//! recomputed attack flag and removal set match the claimed report.
//!
//! Nothing here hides the client updates from the verifier; the point is
//! that the checks are the same arithmetic relations a succinct proof would
//! enforce, and that replay is far cheaper than retraining.

pub(crate) mod circuit;
pub mod field;
pub mod fixed;
pub mod gadgets;
mod prover;
pub mod transcript;
mod verifier;

pub use fixed::{dequantize_raw, quantize_raw, FixedPoint, DEFAULT_SCALE_BITS};
pub use gadgets::{division_check, freivalds_check, isqrt, isqrt_check, FieldMatrix};
pub use prover::{prove_detection, RoundInputs};
pub use transcript::{Commitment, Gadget, GadgetRecord, MultCount, Purpose, Stage, Transcript, VectorLabel};
pub use verifier::{verify_chain, verify_detection, PublicInputs, Rejection, Verdict};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Supported field moduli.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FieldChoice {
    /// 2^61 - 1.
    #[default]
    Mersenne61,
    /// 2^64 - 2^32 + 1.
    Goldilocks,
}

impl FieldChoice {
    pub fn modulus(self) -> u64 {
        match self {
            FieldChoice::Mersenne61 => field::MERSENNE_61,
            FieldChoice::Goldilocks => field::GOLDILOCKS,
        }
    }

    pub fn from_modulus(p: u64) -> Option<Self> {
        match p {
            field::MERSENNE_61 => Some(FieldChoice::Mersenne61),
            field::GOLDILOCKS => Some(FieldChoice::Goldilocks),
            _ => None,
        }
    }

    pub fn bits(self) -> u32 {
        field::modulus_bits(self.modulus())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZkConfig {
    pub field: FieldChoice,
    pub scale_bits: u32,
    pub freivalds_reps: usize,
    /// Comparisons closer than this many ulps are accepted either way and
    /// mark the round marginal.
    pub margin_ulps: i64,
}

impl Default for ZkConfig {
    fn default() -> Self {
        Self {
            field: FieldChoice::Mersenne61,
            scale_bits: DEFAULT_SCALE_BITS,
            freivalds_reps: 2,
            margin_ulps: 16,
        }
    }
}

impl ZkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scale_bits == 0 || self.scale_bits + 8 >= self.field.bits() / 2 {
            return Err(Error::Config(format!(
                "scale_bits {} does not fit the {:?} field",
                self.scale_bits, self.field
            )));
        }
        if self.freivalds_reps == 0 {
            return Err(Error::Config("freivalds_reps must be positive".into()));
        }
        if self.margin_ulps < 0 {
            return Err(Error::Config("margin_ulps must be non-negative".into()));
        }
        Ok(())
    }
}
