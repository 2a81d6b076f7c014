//! Synchronous FedAvg: local training, attack injection, defense,
//! aggregation and reference-cache maintenance, one round at a time.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::defense::{self, DefenseKind, DefenseParams};
use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelSpec};
use crate::scalar::Scalar;
use crate::tensor::{self, ParamVec};
use crate::threat::{self, AttackKind, RoundThreat, ThreatPlan};
use crate::zk::{self, RoundInputs, Transcript, ZkConfig};
use crate::{seeds, DetectionReport, ParamVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_clients: usize,
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub rounds: usize,
    pub seed: u64,
    pub model_kind: ModelKind,
    /// L2 penalty added to every SGD step.
    pub weight_decay: f64,
    /// Weight FedAvg by shard size instead of uniformly.
    pub sample_weighted: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_clients: 10,
            local_epochs: 1,
            learning_rate: 0.05,
            batch_size: 32,
            rounds: 20,
            seed: 0,
            model_kind: ModelKind::LogisticRegression,
            weight_decay: 0.0,
            sample_weighted: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients < 2 {
            return Err(Error::Config(format!("n_clients must be at least 2, got {}", self.n_clients)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay {} must be non-negative", self.weight_decay)));
        }
        Ok(())
    }
}

/// One client's submission for a round, with its importance segment cut out
/// of the full model.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate<T> {
    pub client_id: usize,
    pub round: usize,
    pub model: ParamVec<T>,
    pub importance_segment: ParamVec<T>,
    pub segment_range: Range<usize>,
    /// Size of the shard the model was trained on.
    pub n_samples: usize,
}

impl<T: Scalar> ClientUpdate<T> {
    pub fn new(client_id: usize, round: usize, model: ParamVec<T>, segment_range: Range<usize>, n_samples: usize) -> Result<Self> {
        let importance_segment = model.slice(segment_range.clone())?;
        Ok(Self {
            client_id,
            round,
            model,
            importance_segment,
            segment_range,
            n_samples,
        })
    }

    /// Same client and round with a different model; the segment is recut.
    pub fn with_model(&self, model: ParamVec<T>) -> Result<Self> {
        if model.len() != self.model.len() {
            return Err(Error::Dimension {
                expected: self.model.len(),
                actual: model.len(),
            });
        }
        Self::new(self.client_id, self.round, model, self.segment_range.clone(), self.n_samples)
    }
}

/// Reference models kept by the server between rounds. All entries are
/// importance segments.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceCache<T> {
    pub prev_global: Option<ParamVec<T>>,
    /// Segments of the clients that survived the previous round.
    pub prev_client: BTreeMap<usize, ParamVec<T>>,
    pub prev_avg: Option<ParamVec<T>>,
}

impl<T> Default for ReferenceCache<T> {
    fn default() -> Self {
        Self {
            prev_global: None,
            prev_client: BTreeMap::new(),
            prev_avg: None,
        }
    }
}

/// Locally trained parameters with the shard loss after every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalResult {
    pub params: ParamVector,
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch SGD on the shard's cross-entropy, starting from `global`.
pub fn local_train(
    spec: &ModelSpec,
    global: &ParamVector,
    shard: &LabeledDataset,
    cfg: &TrainConfig,
    client_seed: u64,
) -> Result<LocalResult> {
    if global.len() != spec.param_count() {
        return Err(Error::Dimension {
            expected: spec.param_count(),
            actual: global.len(),
        });
    }
    if shard.n_features() != spec.n_features {
        return Err(Error::Dimension {
            expected: spec.n_features,
            actual: shard.n_features(),
        });
    }
    let mut rng = seeds::stream(client_seed, "sgd", 0, 0);
    let mut params = global.as_slice().to_vec();
    let mut grad = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.local_epochs);
    let all: Vec<usize> = order.clone();
    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            spec.loss_and_grad(&params, shard, batch, &mut grad);
            for (p, &g) in params.iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * (g + cfg.weight_decay * *p);
            }
        }
        epoch_losses.push(spec.loss_and_grad(&params, shard, &all, &mut grad));
    }
    Ok(LocalResult {
        params: ParamVector::new(params)?,
        epoch_losses,
    })
}

/// Elementwise mean of the submitted models in client-id order, optionally
/// weighted by shard size.
pub fn fedavg<T: Scalar>(updates: &[&ClientUpdate<T>], sample_weighted: bool) -> Result<ParamVec<T>> {
    let mut sorted: Vec<&ClientUpdate<T>> = updates.to_vec();
    sorted.sort_by_key(|u| u.client_id);
    let models: Vec<&ParamVec<T>> = sorted.iter().map(|u| &u.model).collect();
    if sample_weighted {
        let w: Vec<T> = sorted.iter().map(|u| T::from_usize_lossy(u.n_samples)).collect();
        tensor::weighted_mean(&models, &w)
    } else {
        tensor::mean(&models)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub backdoor_success: Option<f64>,
}

/// Top-1 accuracy, plus the share of the trigger set sent to the target
/// label when a backdoor is being measured.
pub fn evaluate(
    spec: &ModelSpec,
    model: &ParamVector,
    testset: &LabeledDataset,
    trigger: Option<(&LabeledDataset, usize)>,
) -> Result<Evaluation> {
    let accuracy = spec.accuracy(model, testset)?;
    let backdoor_success = match trigger {
        Some((set, target)) if !set.is_empty() => Some(spec.hit_rate(model, set, target)?),
        _ => None,
    };
    Ok(Evaluation {
        accuracy,
        backdoor_success,
    })
}

/// Per-client inputs to a federation.
#[derive(Debug, Clone)]
pub struct ClientData {
    pub shard: LabeledDataset,
    /// Shard used instead when the client mounts a model-replacement attack.
    pub poisoned: Option<LabeledDataset>,
}

/// Everything one round produced.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub round: usize,
    pub global: ParamVector,
    pub report: DetectionReport,
    pub threat: RoundThreat,
    /// Clients whose updates were aggregated.
    pub survivors: Vec<usize>,
    /// Every update was removed; the previous global model was kept.
    pub quarantined: bool,
    pub updates: Vec<ClientUpdate<f64>>,
    /// Honest local losses per client, epoch by epoch.
    pub losses: BTreeMap<usize, Vec<f64>>,
    pub transcript: Option<Transcript>,
}

impl RoundOutcome {
    pub fn attacked(&self) -> &BTreeSet<usize> {
        &self.threat.targets
    }
}

/// Report for a baseline aggregator: no attack flag, but the clients it
/// discarded are listed as removed so detection metrics apply.
fn dropped_report(round: usize, all: &[usize], kept: &[usize]) -> DetectionReport {
    let mut report = DetectionReport::passthrough(round);
    report.removed = all.iter().copied().filter(|id| !kept.contains(id)).collect();
    report
}

/// Server state across rounds.
pub struct Federation {
    spec: ModelSpec,
    cfg: TrainConfig,
    clients: Vec<ClientData>,
    threat: ThreatPlan,
    defense: DefenseKind,
    params: DefenseParams,
    zk: Option<ZkConfig>,
    global: ParamVector,
    cache: ReferenceCache<f64>,
    /// Cumulative segment deltas for Foolsgold.
    history: BTreeMap<usize, ParamVector>,
    round: usize,
}

impl Federation {
    pub fn new(
        spec: ModelSpec,
        cfg: TrainConfig,
        clients: Vec<ClientData>,
        threat: ThreatPlan,
        defense: DefenseKind,
        params: DefenseParams,
    ) -> Result<Self> {
        cfg.validate()?;
        params.validate()?;
        if clients.len() != cfg.n_clients {
            return Err(Error::Config(format!(
                "{} client shards for n_clients = {}",
                clients.len(),
                cfg.n_clients
            )));
        }
        threat.validate(cfg.n_clients)?;
        if threat.attack_kind == AttackKind::ModelReplacement {
            let missing = threat.malicious_ids.iter().find(|&&id| clients[id].poisoned.is_none());
            if let Some(id) = missing {
                return Err(Error::Config(format!("malicious client {id} has no poisoned shard")));
            }
        }
        let global = spec.init(seeds::derive(cfg.seed, "init", 0, 0))?;
        Ok(Self {
            spec,
            cfg,
            clients,
            threat,
            defense,
            params,
            zk: None,
            global,
            cache: ReferenceCache::default(),
            history: BTreeMap::new(),
            round: 0,
        })
    }

    /// Emit a transcript for every two-stage round.
    pub fn with_verification(mut self, cfg: ZkConfig) -> Self {
        self.zk = Some(cfg);
        self
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn global(&self) -> &ParamVector {
        &self.global
    }

    pub fn cache(&self) -> &ReferenceCache<f64> {
        &self.cache
    }

    pub fn round(&self) -> usize {
        self.round
    }

    fn segment_range(&self) -> Range<usize> {
        self.spec.layout().importance_range()
    }

    fn collect_updates(&self, threat: &RoundThreat) -> Result<(Vec<ClientUpdate<f64>>, BTreeMap<usize, Vec<f64>>)> {
        let round = self.round;
        let range = self.segment_range();
        let results: Vec<Result<(ClientUpdate<f64>, Vec<f64>)>> = self
            .clients
            .par_iter()
            .enumerate()
            .map(|(id, client)| {
                let seed = seeds::derive(self.cfg.seed, "client", round as u64, id as u64);
                let targeted = threat.targets.contains(&id);
                let shard = match (&client.poisoned, targeted, self.threat.attack_kind) {
                    (Some(p), true, AttackKind::ModelReplacement) => p,
                    _ => &client.shard,
                };
                let local = local_train(&self.spec, &self.global, shard, &self.cfg, seed)?;
                let honest = ClientUpdate::new(id, round, local.params, range.clone(), client.shard.len())?;
                if !targeted {
                    return Ok((honest, local.epoch_losses));
                }
                let mut rng = threat::attack_rng(&self.threat, round, id);
                let attacked = match self.threat.attack_kind {
                    AttackKind::None => honest,
                    AttackKind::ByzantineRandom => {
                        threat::apply_byzantine(&honest, self.threat.noise_scale, self.threat.byzantine_mode, &mut rng)?
                    }
                    AttackKind::ModelReplacement => {
                        threat::apply_model_replacement(&honest, &self.global, self.threat.boost(self.cfg.n_clients), &honest.model)?
                    }
                    AttackKind::FreeRider => threat::apply_free_rider(&honest, &self.global, &mut rng)?,
                };
                Ok((attacked, local.epoch_losses))
            })
            .collect();
        let mut updates = Vec::with_capacity(results.len());
        let mut losses = BTreeMap::new();
        for r in results {
            let (u, l) = r?;
            losses.insert(u.client_id, l);
            updates.push(u);
        }
        Ok((updates, losses))
    }

    /// Runs the configured defense and returns (survivors, report, aggregate).
    /// An aggregate of `None` means every update was rejected.
    fn defend(&mut self, updates: &[ClientUpdate<f64>]) -> Result<(Vec<usize>, DetectionReport, Option<ParamVector>)> {
        let round = self.round;
        let all: Vec<usize> = updates.iter().map(|u| u.client_id).collect();
        let by_id = |ids: &[usize]| -> Vec<&ClientUpdate<f64>> { updates.iter().filter(|u| ids.contains(&u.client_id)).collect() };
        let full = |ids: &[usize]| -> Vec<(usize, &ParamVector)> { by_id(ids).into_iter().map(|u| (u.client_id, &u.model)).collect() };
        let n = updates.len();
        Ok(match self.defense {
            DefenseKind::None => {
                let g = fedavg(&by_id(&all), self.cfg.sample_weighted)?;
                (all, DetectionReport::passthrough(round), Some(g))
            }
            DefenseKind::TwoStage => match defense::two_stage_defense(updates, &self.cache, round, &self.params) {
                Ok((survivors, report)) => {
                    let g = fedavg(&by_id(&survivors), self.cfg.sample_weighted)?;
                    (survivors, report, Some(g))
                }
                Err(Error::AllRemoved(_)) => {
                    let mut report = DetectionReport::passthrough(round);
                    report.attack_flag = true;
                    report.removed = all.iter().copied().collect();
                    (Vec::new(), report, None)
                }
                Err(e) => return Err(e),
            },
            DefenseKind::Krum | DefenseKind::MKrum => {
                let m = if self.defense == DefenseKind::Krum {
                    1
                } else {
                    self.params.krum_m.min(n)
                };
                let f = self.params.krum_f_for(n);
                let points = full(&all);
                let kept = defense::krum_select(&points, m, f)?;
                let g = defense::krum_aggregate(&points, m, f)?;
                (kept.clone(), dropped_report(round, &all, &kept), Some(g))
            }
            DefenseKind::Rfa => {
                let models: Vec<&ParamVector> = updates.iter().map(|u| &u.model).collect();
                let g = defense::rfa_aggregate(&models, self.params.rfa_max_iters, self.params.rfa_epsilon)?;
                (all, DetectionReport::passthrough(round), Some(g))
            }
            DefenseKind::Foolsgold => {
                let range = self.segment_range();
                let prev_seg = self.global.slice(range)?;
                let mut sorted: Vec<&ClientUpdate<f64>> = updates.iter().collect();
                sorted.sort_by_key(|u| u.client_id);
                let mut hist = Vec::with_capacity(n);
                for u in &sorted {
                    let delta = u.importance_segment.sub(&prev_seg)?;
                    hist.push(match self.history.get(&u.client_id) {
                        Some(h) => h.add(&delta)?,
                        None => delta,
                    });
                }
                let models: Vec<&ParamVector> = sorted.iter().map(|u| &u.model).collect();
                let hist_refs: Vec<&ParamVector> = hist.iter().collect();
                let (g, weights) = defense::foolsgold_aggregate(&models, &hist_refs)?;
                let mut kept = Vec::new();
                for ((u, h), w) in sorted.iter().zip(hist).zip(weights) {
                    if w > 0.0 {
                        self.history.insert(u.client_id, h);
                        kept.push(u.client_id);
                    }
                }
                let report = dropped_report(round, &all, &kept);
                (kept, report, Some(g))
            }
        })
    }

    /// Plays one round: train, attack, defend, aggregate, refresh the cache.
    pub fn run_round(&mut self) -> Result<RoundOutcome> {
        let round = self.round;
        let threat = threat::schedule(&self.threat, round, self.cfg.n_clients);
        let (updates, losses) = self.collect_updates(&threat)?;
        let (survivors, report, aggregate) = self.defend(&updates)?;
        let quarantined = aggregate.is_none();
        let new_global = aggregate.unwrap_or_else(|| self.global.clone());
        let range = self.segment_range();
        let new_segment = new_global.slice(range)?;

        let transcript = match (&self.zk, self.defense) {
            (Some(zcfg), DefenseKind::TwoStage) => {
                let inputs = RoundInputs {
                    round,
                    updates: updates.iter().map(|u| (u.client_id, &u.importance_segment, u.n_samples)).collect(),
                    cache: &self.cache,
                    output: if quarantined { None } else { Some(&new_segment) },
                    sample_weighted: self.cfg.sample_weighted,
                };
                Some(zk::prove_detection(&inputs, &report, &self.params, zcfg)?)
            }
            _ => None,
        };

        // the next round compares against what survived this one
        let segments: BTreeMap<usize, ParamVector> = updates
            .iter()
            .filter(|u| survivors.contains(&u.client_id))
            .map(|u| (u.client_id, u.importance_segment.clone()))
            .collect();
        self.cache.prev_client = segments;
        if !quarantined {
            self.cache.prev_avg = Some(new_segment.clone());
        }
        self.cache.prev_global = Some(new_segment);
        self.global = new_global.clone();
        self.round += 1;

        Ok(RoundOutcome {
            round,
            global: new_global,
            report,
            threat,
            survivors,
            quarantined,
            updates,
            losses,
            transcript,
        })
    }
}
