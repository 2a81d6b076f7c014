//! Attack injection: turns honest client updates into adversarial ones under
//! a per-round schedule.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::BackdoorSpec;
use crate::engine::ClientUpdate;
use crate::error::{Error, Result};
use crate::seeds::{self, SimRng};
use crate::ParamVector;

/// Perturbation scale a free rider adds to the previous global model.
pub const FREE_RIDER_SCALE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    #[default]
    None,
    ByzantineRandom,
    ModelReplacement,
    FreeRider,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ByzantineMode {
    /// Adds i.i.d. Gaussian noise to the trained model.
    #[default]
    Additive,
    /// Discards the trained model and submits pure Gaussian noise.
    Replace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThreatPlan {
    pub attack_kind: AttackKind,
    pub malicious_ids: BTreeSet<usize>,
    pub attack_probability: f64,
    pub noise_scale: f64,
    pub byzantine_mode: ByzantineMode,
    /// Defaults to the number of clients when unset.
    pub boost_factor: Option<f64>,
    /// Every client turns malicious in an active round. Lifts the
    /// honest-majority requirement.
    pub all_malicious_rounds: bool,
    pub backdoor: Option<BackdoorSpec>,
    pub seed: u64,
}

impl Default for ThreatPlan {
    fn default() -> Self {
        Self {
            attack_kind: AttackKind::None,
            malicious_ids: BTreeSet::new(),
            attack_probability: 1.0,
            noise_scale: 1.0,
            byzantine_mode: ByzantineMode::Additive,
            boost_factor: None,
            all_malicious_rounds: false,
            backdoor: None,
            seed: 0,
        }
    }
}

impl ThreatPlan {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self, n_clients: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.attack_probability) {
            return Err(Error::Config(format!(
                "attack_probability {} outside [0, 1]",
                self.attack_probability
            )));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Config(format!("noise_scale {} must be non-negative", self.noise_scale)));
        }
        if let Some(b) = self.boost_factor {
            if !b.is_finite() {
                return Err(Error::Config("boost_factor must be finite".into()));
            }
        }
        if let Some(&id) = self.malicious_ids.iter().find(|&&id| id >= n_clients) {
            return Err(Error::Config(format!("malicious id {id} but only {n_clients} clients")));
        }
        if !self.all_malicious_rounds && 2 * self.malicious_ids.len() >= n_clients && !self.malicious_ids.is_empty() {
            return Err(Error::Config(format!(
                "{} of {n_clients} clients malicious breaks the honest-majority assumption",
                self.malicious_ids.len()
            )));
        }
        if self.attack_kind == AttackKind::ModelReplacement && self.backdoor.is_none() {
            return Err(Error::Config("model_replacement needs a [threat.backdoor] spec".into()));
        }
        Ok(())
    }

    pub fn boost(&self, n_clients: usize) -> f64 {
        self.boost_factor.unwrap_or(n_clients as f64)
    }
}

/// Ground truth for one round: whether an attack fired and on whom.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RoundThreat {
    pub active: bool,
    pub targets: BTreeSet<usize>,
}

/// Bernoulli(attack_probability) draw for round `round`, from a stream keyed by
/// the plan seed and the round.
pub fn schedule(plan: &ThreatPlan, round: usize, n_clients: usize) -> RoundThreat {
    if plan.attack_kind == AttackKind::None {
        return RoundThreat::default();
    }
    let mut rng = seeds::stream(plan.seed, "schedule", round as u64, 0);
    let active = rng.random_bool(plan.attack_probability);
    if !active {
        return RoundThreat::default();
    }
    let targets = if plan.all_malicious_rounds {
        (0..n_clients).collect()
    } else {
        plan.malicious_ids.clone()
    };
    RoundThreat { active, targets }
}

/// Per-client attack stream, independent of evaluation order.
pub fn attack_rng(plan: &ThreatPlan, round: usize, client_id: usize) -> SimRng {
    seeds::stream(plan.seed, "attack", round as u64, client_id as u64)
}

fn gaussian(len: usize, scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            scale * z
        })
        .collect()
}

pub fn apply_byzantine(update: &ClientUpdate<f64>, noise_scale: f64, mode: ByzantineMode, rng: &mut impl Rng) -> Result<ClientUpdate<f64>> {
    let noise = gaussian(update.model.len(), noise_scale, rng);
    let model = match mode {
        ByzantineMode::Additive => ParamVector::new(update.model.iter().zip(&noise).map(|(&w, &e)| w + e).collect())?,
        ByzantineMode::Replace => ParamVector::new(noise)?,
    };
    update.with_model(model)
}

/// Submits `global + boost * (backdoored - global)`.
pub fn apply_model_replacement(
    update: &ClientUpdate<f64>,
    global: &ParamVector,
    boost_factor: f64,
    backdoored: &ParamVector,
) -> Result<ClientUpdate<f64>> {
    for v in [global, backdoored] {
        if v.len() != update.model.len() {
            return Err(Error::Dimension {
                expected: update.model.len(),
                actual: v.len(),
            });
        }
    }
    // boost·b + (1-boost)·g, which is exact at boost ∈ {0, 1}
    let model = ParamVector::new(
        backdoored
            .iter()
            .zip(global.iter())
            .map(|(&b, &g)| boost_factor * b + (1.0 - boost_factor) * g)
            .collect(),
    )?;
    update.with_model(model)
}

pub fn apply_free_rider(update: &ClientUpdate<f64>, prev_global: &ParamVector, rng: &mut impl Rng) -> Result<ClientUpdate<f64>> {
    apply_free_rider_with_scale(update, prev_global, FREE_RIDER_SCALE, rng)
}

pub fn apply_free_rider_with_scale(
    update: &ClientUpdate<f64>,
    prev_global: &ParamVector,
    scale: f64,
    rng: &mut impl Rng,
) -> Result<ClientUpdate<f64>> {
    if prev_global.len() != update.model.len() {
        return Err(Error::Dimension {
            expected: update.model.len(),
            actual: prev_global.len(),
        });
    }
    let noise = gaussian(prev_global.len(), scale, rng);
    let model = ParamVector::new(prev_global.iter().zip(&noise).map(|(&g, &e)| g + e).collect())?;
    update.with_model(model)
}
