use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::seeds;

/// Fixed-pattern trigger: the listed features are overwritten with
/// `trigger_value` and the label is flipped to `target_label`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackdoorSpec {
    pub trigger_feature_indices: Vec<usize>,
    pub trigger_value: f64,
    pub target_label: usize,
    pub poison_fraction: f64,
}

impl BackdoorSpec {
    pub fn validate(&self, data: &LabeledDataset) -> Result<()> {
        if self.trigger_feature_indices.is_empty() {
            return Err(Error::Config("backdoor trigger needs at least one feature".into()));
        }
        if let Some(&i) = self.trigger_feature_indices.iter().find(|&&i| i >= data.n_features()) {
            return Err(Error::Config(format!("trigger feature {i} outside {} features", data.n_features())));
        }
        if self.target_label >= data.n_classes() {
            return Err(Error::Config(format!("target label {} out of range", self.target_label)));
        }
        if !(self.poison_fraction > 0.0 && self.poison_fraction <= 1.0) {
            return Err(Error::Config(format!("poison_fraction {} outside (0, 1]", self.poison_fraction)));
        }
        if !self.trigger_value.is_finite() {
            return Err(Error::Config("trigger_value must be finite".into()));
        }
        Ok(())
    }

    fn stamp(&self, row: &mut [f64]) {
        for &i in &self.trigger_feature_indices {
            row[i] = self.trigger_value;
        }
    }
}

/// Poisons `round(poison_fraction * n)` rows. The second dataset holds the
/// untouched rows whose true label differs from the target, with the trigger
/// applied and their clean labels kept, for attack-success measurement.
pub fn inject_backdoor(data: &LabeledDataset, spec: &BackdoorSpec, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    spec.validate(data)?;
    let count = (spec.poison_fraction * data.len() as f64).round() as usize;
    if count == 0 {
        return Err(Error::Config(format!(
            "poison_fraction {} selects no rows out of {}",
            spec.poison_fraction,
            data.len()
        )));
    }
    let mut rng = seeds::stream(seed, "backdoor", 0, 0);
    let mut chosen = vec![false; data.len()];
    for i in sample(&mut rng, data.len(), count) {
        chosen[i] = true;
    }

    let mut features = data.features().to_vec();
    let mut labels = data.labels().to_vec();
    let mut holdout = Vec::new();
    for i in 0..data.len() {
        if chosen[i] {
            let nf = data.n_features();
            spec.stamp(&mut features[i * nf..(i + 1) * nf]);
            labels[i] = spec.target_label;
        } else if data.label(i) != spec.target_label {
            holdout.push(i);
        }
    }
    let poisoned = LabeledDataset::new(features, labels, data.n_features(), data.n_classes())?;
    let trigger_set = apply_trigger(&data.subset(&holdout), spec)?;
    Ok((poisoned, trigger_set))
}

/// Stamps the trigger on every row whose label differs from the target,
/// keeping the clean labels.
pub fn apply_trigger(data: &LabeledDataset, spec: &BackdoorSpec) -> Result<LabeledDataset> {
    spec.validate(data)?;
    let nf = data.n_features();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for i in 0..data.len() {
        if data.label(i) == spec.target_label {
            continue;
        }
        let mut row = data.row(i).to_vec();
        spec.stamp(&mut row);
        features.extend(row);
        labels.push(data.label(i));
    }
    LabeledDataset::new(features, labels, nf, data.n_classes())
}
