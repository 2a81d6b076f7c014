//! Detection metrics computed against ground-truth attack labels.

use std::collections::BTreeSet;
use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Running detection counts across rounds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionTally {
    /// Malicious submissions that were removed.
    pub n_tp: u64,
    /// Honest submissions that were removed.
    pub n_fp: u64,
    /// All malicious submissions, detected or not.
    pub n_total: u64,
}

impl Add for ConfusionTally {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            n_tp: self.n_tp + o.n_tp,
            n_fp: self.n_fp + o.n_fp,
            n_total: self.n_total + o.n_total,
        }
    }
}

/// `N_TP / (N_TP + N_FP + N_total)`. Since `N_TP ≤ N_total` the value never
/// exceeds one half.
pub fn modified_ppv(t: &ConfusionTally) -> Result<f64> {
    let denom = t.n_tp + t.n_fp + t.n_total;
    if denom == 0 {
        return Err(Error::UndefinedMetric("modified PPV with no removals and no attacks"));
    }
    Ok(t.n_tp as f64 / denom as f64)
}

/// Folds one round into the tally.
pub fn accumulate(removed: &BTreeSet<usize>, attacked: &BTreeSet<usize>, tally: ConfusionTally) -> ConfusionTally {
    let tp = removed.intersection(attacked).count() as u64;
    tally
        + ConfusionTally {
            n_tp: tp,
            n_fp: removed.len() as u64 - tp,
            n_total: attacked.len() as u64,
        }
}

/// Fraction of rounds whose attack flag matched whether an attack happened.
pub fn cross_round_success_rate(flags: &[(bool, bool)]) -> Result<f64> {
    if flags.is_empty() {
        return Err(Error::UndefinedMetric("success rate over zero rounds"));
    }
    let hits = flags.iter().filter(|(p, a)| p == a).count();
    Ok(hits as f64 / flags.len() as f64)
}
