//! Cross-round attack detection followed by three-sigma cross-client removal.

use std::collections::{BTreeMap, BTreeSet};

use super::krum::krum_aggregate;
use super::report::{CrossRoundScore, DetectionReport};
use super::DefenseParams;
use crate::engine::{ClientUpdate, ReferenceCache};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, cosine_similarity, l2_distance, sample_stats, ParamVec, ScoreStats};

/// Cosine similarity with zero-norm operands scored as fully dissimilar, so
/// an all-zero submission can never pass the threshold.
fn guarded_cosine<T: Scalar>(a: &ParamVec<T>, b: &ParamVec<T>) -> Result<T> {
    match cosine_similarity(a, b) {
        Err(Error::DegenerateVector) => Ok(-T::one()),
        other => other,
    }
}

/// Stage 1. Returns whether an attack is possible this round together with
/// every client's similarity scores. Nothing is removed here.
///
/// Round 0 has no reference models and always reports a possible attack.
/// Clients without a cached segment from the previous round are compared to
/// the previous global segment only.
pub fn cross_round_check<T: Scalar>(
    updates: &[ClientUpdate<T>],
    cache: &ReferenceCache<T>,
    round: usize,
    gamma: T,
) -> Result<(bool, BTreeMap<usize, CrossRoundScore<T>>)> {
    if updates.is_empty() {
        return Err(Error::EmptyAggregation);
    }
    let mut scores = BTreeMap::new();
    if round == 0 {
        return Ok((true, scores));
    }
    let prev_global = cache
        .prev_global
        .as_ref()
        .ok_or_else(|| Error::Config(format!("round {round} has no cached global segment")))?;
    let mut flagged = false;
    for u in updates {
        let score = CrossRoundScore {
            sim_to_prev_global: guarded_cosine(&u.importance_segment, prev_global)?,
            sim_to_prev_self: match cache.prev_client.get(&u.client_id) {
                Some(prev) => Some(guarded_cosine(&u.importance_segment, prev)?),
                None => None,
            },
        };
        flagged |= score.below(gamma);
        scores.insert(u.client_id, score);
    }
    Ok((flagged, scores))
}

/// Reference model for round 0: the m-Krum average with `m = f = ⌊n/2⌋`.
/// Cohorts smaller than three fall back to the plain mean.
pub fn round_zero_reference<T: Scalar>(segments: &[(usize, &ParamVec<T>)]) -> Result<ParamVec<T>> {
    if segments.len() < 3 {
        let v: Vec<&ParamVec<T>> = segments.iter().map(|(_, s)| *s).collect();
        return tensor::mean(&v);
    }
    let half = segments.len() / 2;
    krum_aggregate(segments, half.max(1), half)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossClientOutcome<T> {
    /// The `w_avg` the evilness scores were measured against.
    pub reference: ParamVec<T>,
    pub evilness: BTreeMap<usize, T>,
    pub stats: ScoreStats<T>,
    /// μ + λσ.
    pub bound: T,
    pub removed: BTreeSet<usize>,
    /// Surviving client ids, ascending.
    pub survivors: Vec<usize>,
}

/// Removes every score strictly above `μ + λσ`.
pub fn three_sigma_filter<T: Scalar>(scores: &BTreeMap<usize, T>, lambda: T) -> Result<(ScoreStats<T>, T, BTreeSet<usize>)> {
    let values: Vec<T> = scores.values().copied().collect();
    let stats = sample_stats(&values)?;
    let bound = stats.mean + lambda * stats.std_dev;
    let removed = scores.iter().filter(|(_, &l)| l > bound).map(|(&id, _)| id).collect();
    Ok((stats, bound, removed))
}

/// Stage 2. Scores each update by its L2 distance to the reference model and
/// removes the ones above the one-sided bound.
///
/// The reference is the cached `w_avg` from round 1 on, and the round-zero
/// m-Krum average otherwise (also used if the cache was never filled).
pub fn cross_client_detect<T: Scalar>(
    updates: &[ClientUpdate<T>],
    cache: &ReferenceCache<T>,
    round: usize,
    lambda: T,
) -> Result<CrossClientOutcome<T>> {
    if updates.is_empty() {
        return Err(Error::EmptyAggregation);
    }
    let reference = match (&cache.prev_avg, round) {
        (Some(avg), r) if r > 0 => avg.clone(),
        _ => {
            let segs: Vec<(usize, &ParamVec<T>)> = updates.iter().map(|u| (u.client_id, &u.importance_segment)).collect();
            round_zero_reference(&segs)?
        }
    };
    let mut evilness = BTreeMap::new();
    for u in updates {
        evilness.insert(u.client_id, l2_distance(&u.importance_segment, &reference)?);
    }
    let (stats, bound, removed) = three_sigma_filter(&evilness, lambda)?;
    if removed.len() == updates.len() {
        return Err(Error::AllRemoved(round));
    }
    let survivors = evilness.keys().copied().filter(|id| !removed.contains(id)).collect();
    Ok(CrossClientOutcome {
        reference,
        evilness,
        stats,
        bound,
        removed,
        survivors,
    })
}

/// Runs both stages. When stage 1 clears the round every update survives
/// and no stage-2 fields are filled in.
pub fn two_stage_defense<T: Scalar>(
    updates: &[ClientUpdate<T>],
    cache: &ReferenceCache<T>,
    round: usize,
    params: &DefenseParams,
) -> Result<(Vec<usize>, DetectionReport<T>)> {
    let (flag, scores) = cross_round_check(updates, cache, round, T::lit(params.gamma))?;
    let mut report = DetectionReport::passthrough(round);
    report.cross_round_scores = scores;
    if !flag {
        let mut all: Vec<usize> = updates.iter().map(|u| u.client_id).collect();
        all.sort_unstable();
        return Ok((all, report));
    }
    let outcome = cross_client_detect(updates, cache, round, T::lit(params.lambda))?;
    report.attack_flag = true;
    report.evilness = outcome.evilness;
    report.stats = Some(outcome.stats);
    report.bound = Some(outcome.bound);
    report.removed = outcome.removed;
    Ok((outcome.survivors, report))
}
