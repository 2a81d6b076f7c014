//! Config-driven experiment runner: builds data, clients and a federation
//! from a [`ScenarioConfig`], plays every round, and writes per-round metrics,
//! detection reports and transcripts.

mod config;
mod output;

pub use config::{DataSource, DefenseConfig, ScenarioConfig, OUTPUT_ROOT_ENV};
pub use output::{write_atomic, ROUNDS_CSV_HEADER};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataset::{self, apply_trigger, inject_backdoor, LabeledDataset};
use crate::defense::DefenseKind;
use crate::engine::{evaluate, ClientData, Federation, RoundOutcome};
use crate::error::{Error, Result};
use crate::metrics::{self, ConfusionTally};
use crate::model::{ModelKind, ModelSpec};
use crate::seeds;
use crate::zk::{self, PublicInputs, Transcript};
use crate::DetectionReport;

/// One row of `rounds.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub accuracy: f64,
    pub backdoor_success: Option<f64>,
    pub attack_actual: bool,
    pub attack_flag: bool,
    pub n_removed: usize,
    /// Modified PPV over rounds `0..=round`; empty until it is defined.
    pub ppv_running: Option<f64>,
    pub mult_count: Option<u64>,
    /// Mean final-epoch loss over the clients' honest training.
    pub train_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub name: String,
    pub defense: DefenseKind,
    pub rounds: usize,
    pub final_accuracy: f64,
    pub final_backdoor_success: Option<f64>,
    pub ppv: Option<f64>,
    pub success_rate: Option<f64>,
    pub tally: ConfusionTally,
    pub attacked_rounds: usize,
    pub flagged_rounds: usize,
    pub quarantined_rounds: usize,
    pub transcripts_verified: usize,
    pub marginal_rounds: usize,
}

/// In-memory results of a run.
#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub config: ScenarioConfig,
    pub records: Vec<RoundRecord>,
    pub reports: Vec<DetectionReport>,
    pub transcripts: Vec<Transcript>,
    /// Set of attacked client ids per round.
    pub attacked: Vec<Vec<usize>>,
    pub summary: ScenarioSummary,
    /// Where the files went, if they were written.
    pub output_dir: Option<PathBuf>,
}

/// Datasets and client shards derived from a config.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    /// Triggered, non-target test rows when a backdoor is configured.
    pub trigger: Option<LabeledDataset>,
    pub clients: Vec<ClientData>,
}

pub fn prepare_data(cfg: &ScenarioConfig) -> Result<PreparedData> {
    let (train, test) = match &cfg.data {
        DataSource::Blobs {
            n_classes,
            n_features,
            n_samples,
            test_samples,
        } => {
            let all = dataset::generate_blobs(
                *n_classes,
                *n_features,
                n_samples + test_samples,
                seeds::derive(cfg.seed, "data", 0, 0),
            )?;
            all.split_tail(*test_samples)?
        }
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            limit,
        } => {
            let mut train = dataset::load_idx(train_images, train_labels)?;
            if let Some(n) = *limit {
                let keep: Vec<usize> = (0..n.min(train.len())).collect();
                train = train.subset(&keep);
            }
            (train, dataset::load_idx(test_images, test_labels)?)
        }
    };
    let (train, test) = if cfg.standardize {
        let (mean, std) = train.feature_moments();
        (train.standardized(&mean, &std)?, test.standardized(&mean, &std)?)
    } else {
        (train, test)
    };
    let shards = dataset::partition(&train, &cfg.partition, seeds::derive(cfg.seed, "partition", 0, 0))?;
    let backdoor = cfg.threat.backdoor.as_ref();
    let mut clients = Vec::with_capacity(shards.len());
    for (id, shard) in shards.into_iter().enumerate() {
        let poisoned = match backdoor {
            Some(spec) if cfg.threat.malicious_ids.contains(&id) || cfg.threat.all_malicious_rounds => {
                let seed = seeds::derive(cfg.seed, "backdoor", id as u64, 0);
                Some(inject_backdoor(&shard, spec, seed)?.0)
            }
            _ => None,
        };
        clients.push(ClientData { shard, poisoned });
    }
    let trigger = backdoor.map(|spec| apply_trigger(&test, spec)).transpose()?;
    Ok(PreparedData {
        train,
        test,
        trigger,
        clients,
    })
}

pub fn build_federation(cfg: &ScenarioConfig, data: &PreparedData) -> Result<Federation> {
    let spec = ModelSpec::for_dataset(cfg.train.model_kind, &data.train)?;
    let fed = Federation::new(
        spec,
        cfg.train.clone(),
        data.clients.clone(),
        cfg.threat.clone(),
        cfg.defense.kind,
        cfg.defense.params.clone(),
    )?;
    Ok(if cfg.verify { fed.with_verification(cfg.zk) } else { fed })
}

fn verify_round(cfg: &ScenarioConfig, t: &Transcript, prev: Option<&Transcript>, round: usize) -> Result<zk::Verdict> {
    let public = PublicInputs {
        gamma: cfg.defense.params.gamma,
        lambda: cfg.defense.params.lambda,
        zk: cfg.zk,
        round: Some(round),
        prev,
    };
    let mut rng = seeds::stream(cfg.seed, "verify", round as u64, 0);
    zk::verify_detection(t, &public, &mut rng).map_err(|r| Error::Transcript(format!("round {round} rejected: {r}")))
}

fn record_round(
    out: &RoundOutcome,
    fed: &Federation,
    data: &PreparedData,
    cfg: &ScenarioConfig,
    tally: ConfusionTally,
) -> Result<RoundRecord> {
    let target = cfg.threat.backdoor.as_ref().map(|b| b.target_label);
    let trig = data.trigger.as_ref().zip(target);
    let eval = evaluate(fed.spec(), &out.global, &data.test, trig)?;
    let finals: Vec<f64> = out.losses.values().filter_map(|l| l.last().copied()).collect();
    let train_loss = (!finals.is_empty()).then(|| finals.iter().sum::<f64>() / finals.len() as f64);
    Ok(RoundRecord {
        round: out.round,
        accuracy: eval.accuracy,
        backdoor_success: eval.backdoor_success,
        attack_actual: out.threat.active,
        attack_flag: out.report.attack_flag,
        n_removed: out.report.removed.len(),
        ppv_running: metrics::modified_ppv(&tally).ok(),
        mult_count: out.transcript.as_ref().map(|t| t.mult_count.total),
        train_loss,
    })
}

/// Plays the scenario without touching the filesystem.
pub fn simulate(cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let mut fed = build_federation(cfg, &data)?;
    let mut records = Vec::with_capacity(cfg.train.rounds);
    let mut reports = Vec::with_capacity(cfg.train.rounds);
    let mut transcripts: Vec<Transcript> = Vec::new();
    let mut attacked = Vec::with_capacity(cfg.train.rounds);
    let mut tally = ConfusionTally::default();
    let mut flags = Vec::with_capacity(cfg.train.rounds);
    let mut quarantined_rounds = 0;
    let mut marginal_rounds = 0;
    for _ in 0..cfg.train.rounds {
        let out = fed.run_round()?;
        tally = metrics::accumulate(&out.report.removed, out.attacked(), tally);
        flags.push((out.report.attack_flag, out.threat.active));
        quarantined_rounds += usize::from(out.quarantined);
        if let Some(t) = &out.transcript {
            let verdict = verify_round(cfg, t, transcripts.last(), out.round)?;
            marginal_rounds += usize::from(verdict.marginal);
        }
        records.push(record_round(&out, &fed, &data, cfg, tally)?);
        attacked.push(out.attacked().iter().copied().collect());
        reports.push(out.report);
        transcripts.extend(out.transcript);
    }
    let last = records.last();
    let summary = ScenarioSummary {
        name: cfg.name.clone(),
        defense: cfg.defense.kind,
        rounds: records.len(),
        final_accuracy: last.map_or(f64::NAN, |r| r.accuracy),
        final_backdoor_success: last.and_then(|r| r.backdoor_success),
        ppv: metrics::modified_ppv(&tally).ok(),
        success_rate: metrics::cross_round_success_rate(&flags).ok(),
        tally,
        attacked_rounds: flags.iter().filter(|f| f.1).count(),
        flagged_rounds: flags.iter().filter(|f| f.0).count(),
        quarantined_rounds,
        transcripts_verified: transcripts.len(),
        marginal_rounds,
    };
    Ok(ScenarioResult {
        config: cfg.clone(),
        records,
        reports,
        transcripts,
        attacked,
        summary,
        output_dir: None,
    })
}

/// Runs the scenario and writes its files under the configured output
/// directory.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    let mut result = simulate(cfg)?;
    let dir = cfg.output_path();
    output::write_result(&dir, &result)?;
    result.output_dir = Some(dir);
    Ok(result)
}

/// One row of `comparison.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub defense: DefenseKind,
    pub final_accuracy: f64,
    pub final_backdoor_success: Option<f64>,
    pub ppv: Option<f64>,
    pub success_rate: Option<f64>,
}

impl From<&ScenarioSummary> for ComparisonRow {
    fn from(s: &ScenarioSummary) -> Self {
        Self {
            defense: s.defense,
            final_accuracy: s.final_accuracy,
            final_backdoor_success: s.final_backdoor_success,
            ppv: s.ppv,
            success_rate: s.success_rate,
        }
    }
}

/// Runs the base scenario once per defense on the same seeds. Each run writes
/// into `<output>/<defense>/`, and the table goes to `<output>/comparison.csv`.
pub fn compare_defenses(base: &ScenarioConfig, defenses: &[DefenseKind]) -> Result<(Vec<ComparisonRow>, PathBuf)> {
    if defenses.is_empty() {
        return Err(Error::Config("compare needs at least one defense".into()));
    }
    let root = base.output_path();
    let mut rows = Vec::with_capacity(defenses.len());
    for &kind in defenses {
        let mut cfg = base.clone();
        cfg.defense.kind = kind;
        cfg.verify = base.verify && kind == DefenseKind::TwoStage;
        cfg.output_dir = root.join(kind.to_string());
        let res = run_scenario(&cfg)?;
        rows.push(ComparisonRow::from(&res.summary));
    }
    output::write_comparison(&root.join("comparison.csv"), &rows)?;
    Ok((rows, root))
}

/// Per-layer gradient norms of the current global model on one client's
/// shard, before that client trains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNormRecord {
    pub round: usize,
    pub client: usize,
    pub layer: String,
    pub norm: f64,
    pub importance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySummary {
    pub pairs: usize,
    /// Pairs whose importance-layer norm is strictly above the median layer
    /// norm of that pair.
    pub above_median: usize,
    pub fraction: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Records layer gradient norms for every (round, client) pair of a benign
/// run of the scenario. Needs a model with at least two layers.
pub fn sensitivity(cfg: &ScenarioConfig) -> Result<(Vec<LayerNormRecord>, SensitivitySummary)> {
    if matches!(cfg.train.model_kind, ModelKind::LogisticRegression) {
        return Err(Error::Config(
            "sensitivity needs a multi-layer model (train.model_kind = mlp)".into(),
        ));
    }
    let data = prepare_data(cfg)?;
    let mut fed = build_federation(cfg, &data)?;
    let importance = fed.spec().layout().importance_index();
    let mut records = Vec::new();
    let mut above = 0;
    let mut pairs = 0;
    for round in 0..cfg.train.rounds {
        let grads: Vec<Vec<(String, f64)>> = data
            .clients
            .iter()
            .map(|c| Ok(fed.spec().gradient(fed.global(), &c.shard)?.layer_sensitivity()))
            .collect::<Result<_>>()?;
        for (client, norms) in grads.into_iter().enumerate() {
            let med = median(norms.iter().map(|(_, n)| *n).collect());
            pairs += 1;
            above += usize::from(norms[importance].1 > med);
            for (i, (layer, norm)) in norms.into_iter().enumerate() {
                records.push(LayerNormRecord {
                    round,
                    client,
                    layer,
                    norm,
                    importance: i == importance,
                });
            }
        }
        fed.run_round()?;
    }
    let fraction = if pairs == 0 { 0.0 } else { above as f64 / pairs as f64 };
    Ok((
        records,
        SensitivitySummary {
            pairs,
            above_median: above,
            fraction,
        },
    ))
}

/// Runs [`sensitivity`] and writes `layer_norms.csv` and
/// `sensitivity.json` under the output directory.
pub fn run_sensitivity(cfg: &ScenarioConfig) -> Result<(SensitivitySummary, PathBuf)> {
    let (records, summary) = sensitivity(cfg)?;
    let dir = cfg.output_path();
    output::write_sensitivity(&dir, &records, &summary)?;
    Ok((summary, dir))
}
