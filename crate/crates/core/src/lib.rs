//! Federated-learning simulation with two-stage anomaly detection.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] – parameter vectors, layered model views and the similarity,
//!   distance and statistics primitives (generic over the scalar type).
//! * [`dataset`] – synthetic blobs, IDX ingestion, client partitioning and
//!   backdoor triggers.
//! * [`model`] / [`engine`] – softmax regression and a one-hidden-layer MLP,
//!   local SGD, FedAvg and the per-round federation loop.
//! * [`threat`] – Byzantine, model-replacement and free-rider attacks.
//! * [`defense`] – cross-round / cross-client detection and the Krum, RFA and
//!   Foolsgold baselines.
//! * [`zk`] – fixed-point field encoding, verification gadgets and the
//!   commit-and-replay transcript for a detection run.
//! * [`metrics`] – modified PPV and cross-round success rate.
//! * [`scenario`] – config-driven experiment runner used by the CLI.

pub mod dataset;
pub mod defense;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod scenario;
pub mod seeds;
pub mod tensor;
pub mod threat;
pub mod zk;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Parameter vector over `f64`, the precision used by the simulation path.
pub type ParamVector = tensor::ParamVec<f64>;
/// Single-precision parameter vector.
pub type ParamVector32 = tensor::ParamVec<f32>;
/// Layered model view over `f64` parameters.
pub type LayeredModel = tensor::LayeredModel<f64>;
/// Mean / sample standard deviation over `f64` scores.
pub type ScoreStats = tensor::ScoreStats<f64>;
/// Client submission over `f64` parameters.
pub type ClientUpdate = engine::ClientUpdate<f64>;
/// Server-side reference cache over `f64` segments.
pub type ReferenceCache = engine::ReferenceCache<f64>;
/// Per-round detection record over `f64` scores.
pub type DetectionReport = defense::DetectionReport<f64>;
/// Prime field modulo the Mersenne prime 2^61 - 1.
pub type Fp61 = zk::field::Fp<{ zk::field::MERSENNE_61 }>;
/// Prime field modulo the Goldilocks prime 2^64 - 2^32 + 1.
pub type FpGoldilocks = zk::field::Fp<{ zk::field::GOLDILOCKS }>;
