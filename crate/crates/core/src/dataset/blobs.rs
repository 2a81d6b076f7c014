use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::seeds;

/// Minimum Euclidean distance between class means, in within-class standard
/// deviations.
const MIN_SEPARATION: f64 = 4.0;

/// Isotropic unit-variance Gaussian clusters, one per class, with balanced
/// labels in shuffled order.
pub fn generate_blobs(n_classes: usize, n_features: usize, n_samples: usize, seed: u64) -> Result<LabeledDataset> {
    if n_classes == 0 || n_features == 0 || n_samples == 0 {
        return Err(Error::Config("blob counts must be positive".into()));
    }
    let mut rng = seeds::stream(seed, "blobs", 0, 0);
    let means = class_means(n_classes, n_features, &mut rng);

    let mut labels: Vec<usize> = (0..n_samples).map(|i| i % n_classes).collect();
    labels.shuffle(&mut rng);

    let mut features = Vec::with_capacity(n_samples * n_features);
    for &label in &labels {
        for j in 0..n_features {
            let z: f64 = rng.sample(StandardNormal);
            features.push(means[label][j] + z);
        }
    }
    LabeledDataset::new(features, labels, n_features, n_classes)
}

/// Rejection-samples class means in a box, widening the box until every pair
/// is at least `MIN_SEPARATION` apart.
fn class_means(n_classes: usize, n_features: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut half_width = 5.0;
    loop {
        let mut means: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
        let mut attempts = 0;
        while means.len() < n_classes && attempts < 2_000 {
            attempts += 1;
            let candidate: Vec<f64> = (0..n_features).map(|_| rng.random_range(-half_width..half_width)).collect();
            let far_enough = means.iter().all(|m| {
                let d2: f64 = m.iter().zip(&candidate).map(|(a, b)| (a - b) * (a - b)).sum();
                d2.sqrt() >= MIN_SEPARATION
            });
            if far_enough {
                means.push(candidate);
            }
        }
        if means.len() == n_classes {
            return means;
        }
        half_width *= 1.5;
    }
}
