//! Transcript container: header, committed vectors, gadget records in replay
//! order, the claimed detection report and the multiplication tally.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::DetectionReport;

pub const TRANSCRIPT_VERSION: u32 = 1;
pub const DIGEST_NAME: &str = "sha256";

/// SHA-256 over `(modulus, scale_bits, length, raw values)`, all little-endian,
/// raw values as canonical field residues.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Commitment(pub [u8; 32]);

impl Commitment {
    pub fn of(modulus: u64, scale_bits: u32, values: &[i64]) -> Self {
        let mut h = Sha256::new();
        h.update(modulus.to_le_bytes());
        h.update(scale_bits.to_le_bytes());
        h.update((values.len() as u64).to_le_bytes());
        let p = i128::from(modulus);
        for &v in values {
            h.update((i128::from(v).rem_euclid(p) as u64).to_le_bytes());
        }
        Self(h.finalize().into())
    }
}

impl fmt::Debug for Commitment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Commitment({})", hex::encode(self.0))
    }
}

impl Serialize for Commitment {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for Commitment {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("commitment must be 32 bytes"))?;
        Ok(Self(arr))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub modulus: u64,
    pub scale_bits: u32,
    pub round: usize,
    pub digest: String,
}

/// Fixed-point encodings of the public thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicParams {
    pub gamma_raw: i64,
    pub lambda_raw: i64,
    pub freivalds_reps: usize,
    pub margin_ulps: i64,
}

/// What a committed vector holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "role", content = "client")]
pub enum VectorLabel {
    Update(usize),
    PrevGlobal,
    PrevClient(usize),
    PrevAvg,
    /// Round-zero m-Krum reference.
    Reference,
    /// Importance segment of the aggregated global model.
    Output,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommittedVector {
    pub label: VectorLabel,
    pub commitment: Commitment,
    pub values: Vec<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    CrossRound,
    CrossClient,
    Aggregation,
}

/// Which decision a comparison feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "check", content = "client")]
pub enum Purpose {
    CosineGlobal(usize),
    CosineSelf(usize),
    Removal(usize),
}

/// One gadget invocation. Inputs are repeated so a reader can follow the
/// computation; the verifier checks them against its own wiring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Gadget {
    /// Inner product of two committed vectors (by index).
    Dot {
        a: usize,
        b: usize,
        value: i64,
    },
    Product {
        a: i64,
        b: i64,
        value: i64,
    },
    /// `x = ⌊√y⌋`.
    Isqrt {
        y: i64,
        x: i64,
    },
    /// `a = q·b + r`, `0 ≤ r < b`.
    Division {
        a: i64,
        b: i64,
        q: i64,
        r: i64,
    },
    /// Claimed Gram matrix `M·Mᵀ` of the listed vectors, checked with
    /// Freivalds' test.
    Freivalds {
        rows: Vec<usize>,
        gram: Vec<i64>,
    },
    /// m-Krum selection recomputed from the Gram matrix.
    KrumSelection {
        m: usize,
        f: usize,
        selected: Vec<usize>,
    },
    /// `less` claims `lhs < rhs`.
    Comparison {
        lhs: i64,
        rhs: i64,
        less: bool,
        purpose: Purpose,
    },
    /// `output` is the (weighted) mean of `members` up to rounding.
    Aggregation {
        members: Vec<(usize, u64)>,
        output: usize,
    },
}

impl Gadget {
    pub fn kind(&self) -> &'static str {
        match self {
            Gadget::Dot { .. } => "dot",
            Gadget::Product { .. } => "product",
            Gadget::Isqrt { .. } => "isqrt",
            Gadget::Division { .. } => "division",
            Gadget::Freivalds { .. } => "freivalds",
            Gadget::KrumSelection { .. } => "krum_selection",
            Gadget::Comparison { .. } => "comparison",
            Gadget::Aggregation { .. } => "aggregation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GadgetRecord {
    pub stage: Stage,
    pub gadget: Gadget,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultCount {
    pub cross_round: u64,
    pub cross_client: u64,
    pub aggregation: u64,
    pub total: u64,
}

impl MultCount {
    pub fn add(&mut self, stage: Stage, n: u64) {
        match stage {
            Stage::CrossRound => self.cross_round += n,
            Stage::CrossClient => self.cross_client += n,
            Stage::Aggregation => self.aggregation += n,
        }
        self.total += n;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub header: Header,
    pub params: PublicParams,
    /// FedAvg weight per surviving client (all ones unless weighting by shard
    /// size). Empty when the round was quarantined.
    pub aggregation_weights: BTreeMap<usize, u64>,
    pub vectors: Vec<CommittedVector>,
    pub records: Vec<GadgetRecord>,
    pub claimed_report: DetectionReport,
    /// Some comparison fell inside the rounding margin.
    pub marginal: bool,
    pub mult_count: MultCount,
}

impl Transcript {
    pub fn vector(&self, label: VectorLabel) -> Option<&CommittedVector> {
        self.vectors.iter().find(|v| v.label == label)
    }

    pub fn client_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self
            .vectors
            .iter()
            .filter_map(|v| match v.label {
                VectorLabel::Update(id) => Some(id),
                _ => None,
            })
            .collect();
        ids.sort_unstable();
        ids
    }

    /// Clients whose update was aggregated this round.
    pub fn survivors(&self) -> Vec<usize> {
        self.client_ids()
            .into_iter()
            .filter(|id| !self.claimed_report.removed.contains(id))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(s)?;
        if t.header.version != TRANSCRIPT_VERSION {
            return Err(Error::Transcript(format!("unsupported transcript version {}", t.header.version)));
        }
        if t.header.digest != DIGEST_NAME {
            return Err(Error::Transcript(format!("unsupported digest {:?}", t.header.digest)));
        }
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}
