use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::tensor::ScoreStats;

/// Stage-1 similarities of one client against its reference models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossRoundScore<T> {
    pub sim_to_prev_global: T,
    pub sim_to_prev_self: Option<T>,
}

impl<T: PartialOrd + Copy> CrossRoundScore<T> {
    pub fn below(&self, gamma: T) -> bool {
        self.sim_to_prev_global < gamma || self.sim_to_prev_self.is_some_and(|s| s < gamma)
    }
}

/// Outcome of one round of detection. Stage-2 fields stay empty when stage 1
/// clears the round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport<T> {
    pub round: usize,
    pub attack_flag: bool,
    pub cross_round_scores: BTreeMap<usize, CrossRoundScore<T>>,
    pub evilness: BTreeMap<usize, T>,
    pub stats: Option<ScoreStats<T>>,
    pub bound: Option<T>,
    pub removed: BTreeSet<usize>,
}

impl<T> DetectionReport<T> {
    /// Report for a round the defense left untouched.
    pub fn passthrough(round: usize) -> Self {
        Self {
            round,
            attack_flag: false,
            cross_round_scores: BTreeMap::new(),
            evilness: BTreeMap::new(),
            stats: None,
            bound: None,
            removed: BTreeSet::new(),
        }
    }
}
