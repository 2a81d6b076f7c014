//! Labeled datasets: synthetic blobs, IDX ingestion, client partitioning and
//! backdoor triggers.

mod backdoor;
mod blobs;
mod idx;
mod partition;

pub use backdoor::{apply_trigger, inject_backdoor, BackdoorSpec};
pub use blobs::generate_blobs;
pub use idx::{encode_idx_images, encode_idx_labels, load_idx, parse_idx, IMAGES_MAGIC, LABELS_MAGIC};
pub use partition::{partition, partition_indices, PartitionMode, PartitionSpec};

use crate::error::{Error, Result};

/// Row-major feature matrix with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    n_features: usize,
    n_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, n_features: usize, n_classes: usize) -> Result<Self> {
        if n_features == 0 || n_classes == 0 {
            return Err(Error::Config("datasets need at least one feature and one class".into()));
        }
        if features.len() != labels.len() * n_features {
            return Err(Error::Dimension {
                expected: labels.len() * n_features,
                actual: features.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Config(format!("label {bad} outside [0, {n_classes})")));
        }
        Ok(Self {
            features,
            labels,
            n_features,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self {
            features,
            labels,
            n_features: self.n_features,
            n_classes: self.n_classes,
        }
    }

    /// Splits off the last `n_tail` rows.
    pub fn split_tail(&self, n_tail: usize) -> Result<(Self, Self)> {
        if n_tail >= self.len() {
            return Err(Error::Config(format!("cannot hold out {n_tail} of {} samples", self.len())));
        }
        let cut = self.len() - n_tail;
        let head: Vec<usize> = (0..cut).collect();
        let tail: Vec<usize> = (cut..self.len()).collect();
        Ok((self.subset(&head), self.subset(&tail)))
    }

    /// Per-feature mean and standard deviation (population formula). Constant
    /// features get a deviation of one so they pass through unscaled.
    pub fn feature_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let nf = self.n_features;
        let n = self.len().max(1) as f64;
        let mut mean = vec![0.0; nf];
        for row in self.features.chunks(nf) {
            mean.iter_mut().zip(row).for_each(|(m, &x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; nf];
        for row in self.features.chunks(nf) {
            for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var
            .into_iter()
            .map(|v| (v / n).sqrt())
            .map(|s| if s > 0.0 { s } else { 1.0 })
            .collect();
        (mean, std)
    }

    /// `(x - mean) / std` feature by feature, e.g. with moments taken from a
    /// training split.
    pub fn standardized(&self, mean: &[f64], std: &[f64]) -> Result<Self> {
        for v in [mean, std] {
            if v.len() != self.n_features {
                return Err(Error::Dimension {
                    expected: self.n_features,
                    actual: v.len(),
                });
            }
        }
        let mut features = self.features.clone();
        for row in features.chunks_mut(self.n_features) {
            for ((x, &m), &s) in row.iter_mut().zip(mean).zip(std) {
                *x = (*x - m) / s;
            }
        }
        Ok(Self {
            features,
            labels: self.labels.clone(),
            n_features: self.n_features,
            n_classes: self.n_classes,
        })
    }

    /// Number of rows per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.n_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}
