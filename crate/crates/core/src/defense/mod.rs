//! Two-stage anomaly detection and the robust-aggregation baselines.
//!
//! The detection stages work on importance segments; the baselines aggregate
//! full models. Everything is generic over the scalar type.

mod foolsgold;
mod krum;
mod report;
mod rfa;
mod two_stage;

pub use foolsgold::{foolsgold_aggregate, foolsgold_weights};
pub use krum::{krum_aggregate, krum_neighbor_count, krum_score, krum_scores, krum_select};
pub use report::{CrossRoundScore, DetectionReport};
pub use rfa::{rfa_aggregate, RFA_DEFAULT_EPSILON, RFA_DEFAULT_MAX_ITERS};
pub use two_stage::{
    cross_client_detect, cross_round_check, round_zero_reference, three_sigma_filter, two_stage_defense, CrossClientOutcome,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DefenseKind {
    #[default]
    None,
    TwoStage,
    Krum,
    MKrum,
    Rfa,
    Foolsgold,
}

impl std::str::FromStr for DefenseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "none" => DefenseKind::None,
            "two_stage" => DefenseKind::TwoStage,
            "krum" => DefenseKind::Krum,
            "m_krum" => DefenseKind::MKrum,
            "rfa" => DefenseKind::Rfa,
            "foolsgold" => DefenseKind::Foolsgold,
            other => return Err(Error::Config(format!("unknown defense {other:?}"))),
        })
    }
}

impl std::fmt::Display for DefenseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DefenseKind::None => "none",
            DefenseKind::TwoStage => "two_stage",
            DefenseKind::Krum => "krum",
            DefenseKind::MKrum => "m_krum",
            DefenseKind::Rfa => "rfa",
            DefenseKind::Foolsgold => "foolsgold",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DefenseParams {
    /// Cosine threshold of the cross-round check, in (-1, 1).
    pub gamma: f64,
    /// Number of standard deviations in the bound μ + λσ.
    pub lambda: f64,
    /// Models kept by m-Krum.
    pub krum_m: usize,
    /// Assumed number of Byzantine clients for Krum; `None` picks ⌊(n-3)/2⌋.
    pub krum_f: Option<usize>,
    pub rfa_max_iters: usize,
    pub rfa_epsilon: f64,
}

impl Default for DefenseParams {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            lambda: 0.5,
            krum_m: 5,
            krum_f: None,
            rfa_max_iters: RFA_DEFAULT_MAX_ITERS,
            rfa_epsilon: RFA_DEFAULT_EPSILON,
        }
    }
}

impl DefenseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > -1.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma {} outside (-1, 1)", self.gamma)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda {} must be positive", self.lambda)));
        }
        if self.krum_m == 0 {
            return Err(Error::Config("krum_m must be positive".into()));
        }
        if !(self.rfa_epsilon > 0.0) || self.rfa_max_iters == 0 {
            return Err(Error::Config("rfa_epsilon and rfa_max_iters must be positive".into()));
        }
        Ok(())
    }

    pub fn krum_f_for(&self, n: usize) -> usize {
        self.krum_f.unwrap_or(n.saturating_sub(3) / 2)
    }
}
