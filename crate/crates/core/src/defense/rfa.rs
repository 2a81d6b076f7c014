//! Geometric-median aggregation by smoothed Weiszfeld iterations.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, l2_distance, ParamVec};

pub const RFA_DEFAULT_MAX_ITERS: usize = 100;
pub const RFA_DEFAULT_EPSILON: f64 = 1e-6;

/// Starts at the mean and repeats
/// `z ← Σ wᵢ/max(ε, ‖wᵢ - z‖) / Σ 1/max(ε, ‖wᵢ - z‖)` until `z` moves less
/// than `epsilon` or `max_iters` is reached.
pub fn rfa_aggregate<T: Scalar>(points: &[&ParamVec<T>], max_iters: usize, epsilon: T) -> Result<ParamVec<T>> {
    if points.is_empty() {
        return Err(Error::EmptyAggregation);
    }
    let mut z = tensor::mean(points)?;
    for _ in 0..max_iters {
        let mut weights = Vec::with_capacity(points.len());
        for p in points {
            weights.push(T::one() / l2_distance(p, &z)?.max(epsilon));
        }
        let next = tensor::weighted_mean(points, &weights)?;
        let moved = l2_distance(&next, &z)?;
        z = next;
        if moved < epsilon {
            break;
        }
    }
    Ok(z)
}
