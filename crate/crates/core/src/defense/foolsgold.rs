//! Foolsgold: clients whose cumulative update histories point the same way
//! are treated as sybils and down-weighted.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{cosine_similarity, weighted_mean, ParamVec};

/// Per-client aggregation weights in `[0, 1]` from cumulative histories.
///
/// `αᵢ = 1 - maxⱼ≠ᵢ cos(hᵢ, hⱼ)`, clipped to `[0, 1]`, divided by the largest
/// weight, then sharpened with `ln(α / (1 - α)) + 0.5` and clipped again.
/// Histories with zero norm count as orthogonal to everything.
pub fn foolsgold_weights<T: Scalar>(histories: &[&ParamVec<T>]) -> Result<Vec<T>> {
    let n = histories.len();
    if n == 0 {
        return Err(Error::EmptyAggregation);
    }
    let one = T::one();
    let zero = T::zero();
    let mut max_cs = vec![zero; n];
    for i in 0..n {
        let mut best = if n == 1 { zero } else { -one };
        for j in 0..n {
            if i == j {
                continue;
            }
            let cs = match cosine_similarity(histories[i], histories[j]) {
                Ok(c) => c,
                Err(Error::DegenerateVector) => zero,
                Err(e) => return Err(e),
            };
            best = best.max(cs);
        }
        max_cs[i] = best;
    }
    let mut wv: Vec<T> = max_cs.iter().map(|&m| (one - m).max(zero).min(one)).collect();
    let top = wv.iter().copied().fold(zero, T::max);
    if top == zero {
        return Ok(vec![one; n]);
    }
    let cap = T::lit(0.99);
    let half = T::lit(0.5);
    for w in &mut wv {
        let mut a = *w / top;
        if a >= one {
            a = cap;
        }
        let logit = (a / (one - a)).ln() + half;
        *w = if logit.is_nan() || logit < zero {
            zero
        } else if logit.is_infinite() || logit > one {
            one
        } else {
            logit
        };
    }
    Ok(wv)
}

/// Weighted mean of `models` with Foolsgold weights; falls back to uniform
/// weights if every client is zeroed out.
pub fn foolsgold_aggregate<T: Scalar>(models: &[&ParamVec<T>], histories: &[&ParamVec<T>]) -> Result<(ParamVec<T>, Vec<T>)> {
    if models.len() != histories.len() {
        return Err(Error::Dimension {
            expected: models.len(),
            actual: histories.len(),
        });
    }
    let mut weights = foolsgold_weights(histories)?;
    if weights.iter().all(|&w| w == T::zero()) {
        weights = vec![T::one(); models.len()];
    }
    Ok((weighted_mean(models, &weights)?, weights))
}
