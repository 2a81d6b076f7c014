//! Krum and m-Krum selection.
//!
//! A client's score is the sum of its `L - f - 2` smallest squared distances
//! to the other submissions (at least one neighbour is always used, so tiny
//! cohorts with a large `f` still get a score). The `m` lowest scores are
//! kept, ties broken by ascending client id, and averaged in id order.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, squared_l2_distance, ParamVec};

/// Neighbours summed into each score: `max(1, L - f - 2)`, at most `L - 1`.
pub fn krum_neighbor_count(l: usize, f: usize) -> usize {
    l.saturating_sub(f + 2).max(1).min(l.saturating_sub(1))
}

fn check_cohort<T: Scalar>(points: &[(usize, &ParamVec<T>)]) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::InsufficientClients(points.len()));
    }
    Ok(())
}

pub fn krum_score<T: Scalar>(points: &[(usize, &ParamVec<T>)], i: usize, f: usize) -> Result<T> {
    check_cohort(points)?;
    let l = points.len();
    if i >= l {
        return Err(Error::Dimension { expected: l, actual: i });
    }
    let mut d = Vec::with_capacity(l - 1);
    for (j, (_, w)) in points.iter().enumerate() {
        if j != i {
            d.push(squared_l2_distance(points[i].1, w)?);
        }
    }
    d.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let k = krum_neighbor_count(l, f);
    Ok(d[..k].iter().fold(T::zero(), |acc, &x| acc + x))
}

pub fn krum_scores<T: Scalar>(points: &[(usize, &ParamVec<T>)], f: usize) -> Result<Vec<T>> {
    (0..points.len()).map(|i| krum_score(points, i, f)).collect()
}

/// Client ids of the `m` best-scoring submissions, ascending.
pub fn krum_select<T: Scalar>(points: &[(usize, &ParamVec<T>)], m: usize, f: usize) -> Result<Vec<usize>> {
    let scores = krum_scores(points, f)?;
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .expect("finite scores")
            .then(points[a].0.cmp(&points[b].0))
    });
    let keep = m.clamp(1, points.len());
    let mut ids: Vec<usize> = order[..keep].iter().map(|&i| points[i].0).collect();
    ids.sort_unstable();
    Ok(ids)
}

/// Mean of the `m` submissions with the lowest Krum scores. `m = 1` is
/// classic Krum.
pub fn krum_aggregate<T: Scalar>(points: &[(usize, &ParamVec<T>)], m: usize, f: usize) -> Result<ParamVec<T>> {
    let ids = krum_select(points, m, f)?;
    let mut kept: Vec<(usize, &ParamVec<T>)> = points.iter().copied().filter(|(id, _)| ids.contains(id)).collect();
    kept.sort_by_key(|(id, _)| *id);
    let vectors: Vec<&ParamVec<T>> = kept.into_iter().map(|(_, v)| v).collect();
    tensor::mean(&vectors)
}
