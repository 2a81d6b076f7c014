//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//! Run with `cargo test -p fedsentry --test acceptance`.

mod common;

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use fedsentry::defense::{cross_client_detect, krum_aggregate, two_stage_defense, DefenseKind, DefenseParams};
use fedsentry::engine::{fedavg, ReferenceCache};
use fedsentry::scenario::{self, ScenarioResult};
use fedsentry::tensor::{self, ParamVec};
use fedsentry::threat::AttackKind;
use fedsentry::zk::{
    self, dequantize_raw, freivalds_check, isqrt_check, quantize_raw, FieldMatrix, Gadget, Purpose, RoundInputs, Transcript, ZkConfig,
};
use fedsentry::{ClientUpdate, Fp61, ParamVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

struct Runs {
    cross_round: Vec<ScenarioResult>,
    ppv: Vec<ScenarioResult>,
    efficacy: Option<ScenarioResult>,
}

impl Runs {
    fn verified(&self) -> impl Iterator<Item = &ScenarioResult> {
        self.cross_round.iter().chain(&self.ppv).chain(&self.efficacy)
    }
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit_s: u64, start: Instant, out: Outcome) -> Outcome {
    let took = start.elapsed();
    match out {
        Ok(d) if took > Duration::from_secs(limit_s) => Err(format!("{d}; over the {limit_s}s budget")),
        o => o,
    }
}

fn rational(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// `{ i : ℓ_i > μ + λσ }` in exact rational arithmetic, σ the sample
/// standard deviation. Squares both sides to avoid the root.
fn three_sigma_oracle(scores: &[f64], lambda: f64) -> BTreeSet<usize> {
    let n = BigRational::from_integer(BigInt::from(scores.len()));
    let ls: Vec<BigRational> = scores.iter().map(|&s| rational(s)).collect();
    let mu = ls.iter().fold(BigRational::zero(), |a, l| a + l) / &n;
    let var = ls.iter().fold(BigRational::zero(), |a, l| a + (l - &mu) * (l - &mu)) / (n - BigRational::from_integer(1.into()));
    let lam = rational(lambda);
    let rhs = &lam * &lam * var;
    ls.iter()
        .enumerate()
        .filter(|(_, l)| {
            let d = *l - &mu;
            d.is_positive() && &d * &d > rhs
        })
        .map(|(i, _)| i)
        .collect()
}

fn c1_three_sigma() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let zero = ParamVec::from_slice(&[0.0]).unwrap();
    let cache = ReferenceCache {
        prev_global: Some(zero.clone()),
        prev_client: Default::default(),
        prev_avg: Some(zero),
    };
    let mut total_removed = 0;
    for case in 0..1000 {
        let len = rng.random_range(3..=50);
        let lambda = rng.random_range(0.25..3.0);
        // Scores are distances to a zero reference, so a one-dimensional
        // update of value s scores exactly |s|.
        let scores: Vec<f64> = (0..len)
            .map(|_| {
                if rng.random_bool(0.1) {
                    40.0 + rng.random_range(0.0..20.0)
                } else {
                    rng.random_range(0.0..10.0)
                }
            })
            .collect();
        let updates: Vec<ClientUpdate> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| ClientUpdate::new(i, 1, ParamVec::from_slice(&[s]).unwrap(), 0..1, 1).unwrap())
            .collect();
        let got = cross_client_detect(&updates, &cache, 1, lambda).map_err(|e| format!("case {case}: {e}"))?;
        let want = three_sigma_oracle(&scores, lambda);
        if got.removed != want {
            return Err(format!("case {case}: removed {:?}, oracle {want:?}", got.removed));
        }
        total_removed += want.len();
    }
    Ok(format!("1000 lists agree ({total_removed} removals)"))
}

/// Brute-force m-Krum over integer points: exact squared distances, sort,
/// sum the k nearest, keep the m lowest (ties by id), average in id order.
fn krum_oracle(points: &[(usize, Vec<i64>)], m: usize, f: usize) -> Vec<f64> {
    let l = points.len();
    let k = (l as i64 - f as i64 - 2).max(1).min(l as i64 - 1) as usize;
    let mut scored: Vec<(i64, usize, usize)> = (0..l)
        .map(|i| {
            let mut d: Vec<i64> = (0..l)
                .filter(|&j| j != i)
                .map(|j| points[i].1.iter().zip(&points[j].1).map(|(a, b)| (a - b) * (a - b)).sum())
                .collect();
            d.sort_unstable();
            (d[..k].iter().sum(), points[i].0, i)
        })
        .collect();
    scored.sort_unstable();
    let mut keep: Vec<usize> = scored[..m].iter().map(|s| s.2).collect();
    keep.sort_by_key(|&i| points[i].0);
    let dim = points[0].1.len();
    (0..dim)
        .map(|c| {
            let mut s = 0.0f64;
            for &i in &keep {
                s += points[i].1[c] as f64;
            }
            s / m as f64
        })
        .collect()
}

fn c2_krum() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..500 {
        let l = rng.random_range(3..=8);
        let dim = rng.random_range(1..=5);
        // Few distinct coordinates so that score ties are common.
        let span = if rng.random_bool(0.5) { 2 } else { 50 };
        let mut ids: Vec<usize> = (0..100).collect();
        rand::seq::SliceRandom::shuffle(&mut ids[..], &mut rng);
        let points: Vec<(usize, Vec<i64>)> = ids[..l]
            .iter()
            .map(|&id| (id, (0..dim).map(|_| rng.random_range(-span..=span)).collect()))
            .collect();
        let m = rng.random_range(1..=l);
        let f = rng.random_range(0..l);
        let vecs: Vec<ParamVector> = points
            .iter()
            .map(|(_, p)| ParamVec::new(p.iter().map(|&x| x as f64).collect()).unwrap())
            .collect();
        let refs: Vec<(usize, &ParamVector)> = points.iter().zip(&vecs).map(|((id, _), v)| (*id, v)).collect();
        let got = krum_aggregate(&refs, m, f).map_err(|e| format!("case {case}: {e}"))?;
        let want = krum_oracle(&points, m, f);
        let same = got.iter().zip(&want).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            return Err(format!(
                "case {case} (L={l}, m={m}, f={f}): {:?} vs oracle {want:?}",
                got.as_slice()
            ));
        }
    }
    Ok("500 cohorts bit-identical".into())
}

fn run_seeds(name: &str, seeds: &[u64]) -> Result<Vec<ScenarioResult>, String> {
    seeds
        .iter()
        .map(|&s| scenario::simulate(&common::config(name, s)).map_err(|e| format!("{name} seed {s}: {e}")))
        .collect()
}

fn c3_cross_round(runs: &mut Runs) -> Outcome {
    runs.cross_round = run_seeds("cross_round.toml", &[1, 2, 3])?;
    let rates: Vec<f64> = runs.cross_round.iter().map(|r| r.summary.success_rate.unwrap_or(0.0)).collect();
    let noise = common::config("cross_round.toml", 1).threat.noise_scale;
    check(
        rates.iter().all(|&r| r >= 0.90),
        format!("success rates {rates:.3?} (need >= 0.90, noise_scale {noise})"),
    )
}

fn c4_ppv(runs: &mut Runs) -> Outcome {
    runs.ppv = run_seeds("ppv.toml", &[1, 2, 3])?;
    let ppv: Vec<f64> = runs.ppv.iter().map(|r| r.summary.ppv.unwrap_or(0.0)).collect();
    let max_running = runs
        .ppv
        .iter()
        .flat_map(|r| r.records.iter().filter_map(|x| x.ppv_running))
        .fold(0.0f64, f64::max);
    check(
        ppv.iter().all(|&p| p >= 0.45) && max_running <= 0.5,
        format!("final PPV {ppv:.3?} (need >= 0.45), max running PPV {max_running:.3} (need <= 0.5)"),
    )
}

fn c5_efficacy(runs: &mut Runs) -> Outcome {
    let attacked = common::config("efficacy.toml", 1);
    let mut clean = attacked.clone();
    clean.threat.attack_kind = AttackKind::None;
    clean.defense.kind = DefenseKind::None;
    clean.verify = false;
    let mut undefended = attacked.clone();
    undefended.defense.kind = DefenseKind::None;
    undefended.verify = false;
    let acc = |c| scenario::simulate(c).map(|r| r.summary.final_accuracy).map_err(|e| e.to_string());
    let base = acc(&clean)?;
    let none = acc(&undefended)?;
    let defended = scenario::simulate(&attacked).map_err(|e| e.to_string())?;
    let two = defended.summary.final_accuracy;
    runs.efficacy = Some(defended);
    check(
        base - two <= 0.03 && base - none >= 0.15,
        format!(
            "baseline {base:.3}, two_stage {two:.3} (need >= {:.3}), none {none:.3} (need <= {:.3})",
            base - 0.03,
            base - 0.15
        ),
    )
}

fn c6_neutrality() -> Outcome {
    let mut cfg = common::config("benign.toml", 1);
    cfg.defense.kind = DefenseKind::TwoStage;
    let data = scenario::prepare_data(&cfg).map_err(|e| e.to_string())?;
    let mut fed = scenario::build_federation(&cfg, &data).map_err(|e| e.to_string())?;
    let mut cleared = 0;
    let mut two_final = 0.0;
    for _ in 0..cfg.train.rounds {
        let out = fed.run_round().map_err(|e| e.to_string())?;
        if out.round >= 1 && !out.report.attack_flag {
            let all: Vec<&ClientUpdate> = out.updates.iter().collect();
            let avg = fedavg(&all, cfg.train.sample_weighted).map_err(|e| e.to_string())?;
            let same = avg.iter().zip(out.global.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same || !out.report.removed.is_empty() {
                return Err(format!(
                    "round {} cleared by stage 1 but the global model is not plain FedAvg",
                    out.round
                ));
            }
            cleared += 1;
        }
        two_final = fedsentry::engine::evaluate(fed.spec(), fed.global(), &data.test, None)
            .map_err(|e| e.to_string())?
            .accuracy;
    }
    let mut plain = cfg.clone();
    plain.defense.kind = DefenseKind::None;
    let none_final = scenario::simulate(&plain).map_err(|e| e.to_string())?.summary.final_accuracy;
    check(
        cleared >= 1 && (two_final - none_final).abs() <= 1e-9,
        format!(
            "{cleared}/{} rounds cleared and bit-identical to FedAvg; final accuracy {two_final:.4} vs {none_final:.4}",
            cfg.train.rounds - 1
        ),
    )
}

fn c7_freivalds() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut accepted, mut rejected) = (0, 0);
    for _ in 0..1000 {
        let (n, k, m) = (rng.random_range(1..=16), rng.random_range(1..=16), rng.random_range(1..=16));
        let a = FieldMatrix::<{ zk::field::MERSENNE_61 }>::random(n, k, &mut rng);
        let b = FieldMatrix::random(k, m, &mut rng);
        let c = a.matmul(&b).unwrap();
        accepted += usize::from(freivalds_check(&a, &b, &c, 2, &mut rng).unwrap());
        let mut bad = c.clone();
        let (i, j) = (rng.random_range(0..n), rng.random_range(0..m));
        let delta = Fp61::new(rng.random_range(1..zk::field::MERSENNE_61));
        bad.set(i, j, bad.get(i, j) + delta);
        rejected += usize::from(!freivalds_check(&a, &b, &bad, 2, &mut rng).unwrap());
    }
    check(
        accepted == 1000 && rejected == 1000,
        format!("{accepted}/1000 correct accepted, {rejected}/1000 corrupted rejected"),
    )
}

fn c8_isqrt() -> Outcome {
    let mut root: i128 = 0;
    for y in 0..=1_000_000i128 {
        while (root + 1) * (root + 1) <= y {
            root += 1;
        }
        for x in [root - 1, root, root + 1] {
            if x >= 0 && isqrt_check(y, x) != (x == root) {
                return Err(format!("y={y}: isqrt_check({y}, {x}) disagrees with floor sqrt {root}"));
            }
        }
        if zk::isqrt(y) != root {
            return Err(format!("y={y}: isqrt gave {}", zk::isqrt(y)));
        }
    }
    Ok("all y in [0, 1e6] exact".into())
}

fn c9_transcripts(runs: &Runs) -> Outcome {
    let mut honest = 0;
    let mut pool: Vec<(&Transcript, Option<&Transcript>, f64, f64)> = Vec::new();
    for run in runs.verified() {
        let p = &run.config.defense.params;
        for (i, t) in run.transcripts.iter().enumerate() {
            let prev = i.checked_sub(1).map(|j| &run.transcripts[j]);
            common::verify_one(t, prev, p.gamma, p.lambda, i as u64).map_err(|r| format!("{} round {i} rejected: {r}", run.config.name))?;
            honest += 1;
            pool.push((t, prev, p.gamma, p.lambda));
        }
    }
    if honest == 0 {
        return Err("no transcripts from criteria 3-5".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut caught = 0;
    for k in 0..1000u64 {
        let (t, prev, gamma, lambda) = pool[rng.random_range(0..pool.len())];
        let json = common::mutate(t, &mut rng);
        let rejected = match Transcript::from_json(&json) {
            Err(_) => true,
            Ok(m) => common::verify_one(&m, prev, gamma, lambda, k).is_err(),
        };
        if !rejected {
            return Err(format!("mutation {k} of round {} accepted: {json}", t.header.round));
        }
        caught += 1;
    }
    Ok(format!(
        "{honest}/{honest} honest transcripts accepted, {caught}/1000 mutations rejected"
    ))
}

fn c10_quantization(runs: &Runs) -> Outcome {
    let s = zk::DEFAULT_SCALE_BITS;
    let bound = 2f64.powi(-(s as i32) - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for _ in 0..100_000 {
        let x = rng.random_range(-1000.0..1000.0) * if rng.random_bool(0.5) { 1.0 } else { 1e-3 };
        let raw = quantize_raw(x, s, zk::FieldChoice::Mersenne61.bits()).map_err(|e| e.to_string())?;
        worst = worst.max((dequantize_raw(raw, s) - x).abs());
    }
    if worst > bound {
        return Err(format!("max quantization error {worst:e} > {bound:e}"));
    }
    let mut compared = 0;
    for run in runs.verified() {
        for (t, report) in run.transcripts.iter().zip(&run.reports) {
            if t.marginal || !report.attack_flag {
                continue;
            }
            let fixed: BTreeSet<usize> = t
                .records
                .iter()
                .filter_map(|r| match r.gadget {
                    Gadget::Comparison {
                        lhs,
                        rhs,
                        purpose: Purpose::Removal(id),
                        ..
                    } if lhs < rhs => Some(id),
                    _ => None,
                })
                .collect();
            if fixed != report.removed {
                return Err(format!(
                    "{} round {}: fixed-point removes {fixed:?}, float {:?}",
                    run.config.name, report.round, report.removed
                ));
            }
            compared += 1;
        }
    }
    check(
        compared > 0,
        format!("max error {worst:.2e} <= {bound:.2e}; removal sets equal on {compared} flagged non-marginal rounds"),
    )
}

fn c11_sensitivity() -> Outcome {
    let cfg = common::config("sensitivity.toml", 1);
    let (_, summary) = scenario::sensitivity(&cfg).map_err(|e| e.to_string())?;
    check(
        summary.fraction >= 0.8,
        format!(
            "{}/{} pairs above median ({:.3}, need >= 0.8)",
            summary.above_median, summary.pairs, summary.fraction
        ),
    )
}

/// Stage-1 cost of a synthetic round-1 proof at importance-segment length `d`.
fn stage_one_cost(d: usize, rng: &mut ChaCha8Rng) -> Result<(u64, u64), String> {
    let n = 10;
    let gauss = |rng: &mut ChaCha8Rng, scale: f64| -> ParamVector {
        ParamVec::new(
            (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    scale * z
                })
                .collect::<Vec<f64>>(),
        )
        .unwrap()
    };
    let base = gauss(rng, 0.1);
    let jitter = |rng: &mut ChaCha8Rng| base.add(&gauss(rng, 0.01)).unwrap();
    let cache = ReferenceCache {
        prev_global: Some(jitter(rng)),
        prev_client: (0..n).map(|i| (i, jitter(rng))).collect(),
        prev_avg: Some(jitter(rng)),
    };
    let updates: Vec<ClientUpdate> = (0..n).map(|i| ClientUpdate::new(i, 1, jitter(rng), 0..d, 100).unwrap()).collect();
    let params = DefenseParams::default();
    let (survivors, report) = two_stage_defense(&updates, &cache, 1, &params).map_err(|e| e.to_string())?;
    let kept: Vec<&ParamVector> = updates
        .iter()
        .filter(|u| survivors.contains(&u.client_id))
        .map(|u| &u.importance_segment)
        .collect();
    let output = tensor::mean(&kept).map_err(|e| e.to_string())?;
    let inputs = RoundInputs {
        round: 1,
        updates: updates.iter().map(|u| (u.client_id, &u.importance_segment, u.n_samples)).collect(),
        cache: &cache,
        output: Some(&output),
        sample_weighted: false,
    };
    let t = zk::prove_detection(&inputs, &report, &params, &ZkConfig::default()).map_err(|e| e.to_string())?;
    Ok((t.mult_count.cross_round, t.mult_count.cross_client))
}

fn c12_cost(runs: &Runs) -> Outcome {
    let mut rounds = 0;
    let mut min_ratio = f64::INFINITY;
    for run in runs.verified() {
        for t in &run.transcripts {
            let c = t.mult_count;
            if c.cross_client <= c.cross_round {
                return Err(format!(
                    "{} round {}: stage 2 costs {} <= stage 1 {}",
                    run.config.name, t.header.round, c.cross_client, c.cross_round
                ));
            }
            if c.cross_round > 0 {
                min_ratio = min_ratio.min(c.cross_client as f64 / c.cross_round as f64);
            }
            rounds += 1;
        }
    }
    // The sweep only pins the growth of stage 1. At short segments the
    // range-checked comparisons of stage 1 outweigh the Gram check of
    // stage 2, so the per-d ratio is reported rather than required.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut pts = Vec::new();
    let mut ratios = Vec::new();
    for d in [64, 256, 1024] {
        let (one, two) = stage_one_cost(d, &mut rng)?;
        pts.push((d as f64, one as f64));
        ratios.push(two as f64 / one as f64);
    }
    let r2 = common::r_squared(&pts);
    check(
        r2 >= 0.99 && rounds > 0,
        format!(
            "stage 2 > stage 1 on {rounds} verified rounds (min ratio {min_ratio:.3}); stage-1 cost {:?} at d=64/256/1024, R^2 {r2:.5}, stage2/stage1 {ratios:.3?}",
            pts.iter().map(|p| p.1 as u64).collect::<Vec<_>>()
        ),
    )
}

fn main() -> ExitCode {
    let mut runs = Runs {
        cross_round: Vec::new(),
        ppv: Vec::new(),
        efficacy: None,
    };
    let mut failed = 0;
    let mut report = |n: usize, name: &str, limit: Option<u64>, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let out = f();
        let out = match limit {
            Some(l) => within(l, start, out),
            None => out,
        };
        let took = start.elapsed().as_secs_f64();
        match out {
            Ok(d) => println!("[PASS] {n:>2} {name}: {d} ({took:.2}s)"),
            Err(d) => {
                failed += 1;
                println!("[FAIL] {n:>2} {name}: {d} ({took:.2}s)");
            }
        }
    };
    report(1, "three_sigma_equivalence", Some(10), &mut c1_three_sigma);
    report(2, "krum_oracle_equivalence", Some(10), &mut c2_krum);
    report(3, "cross_round_detection", Some(120), &mut || c3_cross_round(&mut runs));
    report(4, "modified_ppv", Some(120), &mut || c4_ppv(&mut runs));
    report(5, "defense_efficacy", Some(180), &mut || c5_efficacy(&mut runs));
    report(6, "benign_neutrality", Some(60), &mut c6_neutrality);
    report(7, "freivalds", Some(5), &mut c7_freivalds);
    report(8, "isqrt_exactness", Some(5), &mut c8_isqrt);
    report(9, "transcript_completeness_and_tamper", Some(120), &mut || c9_transcripts(&runs));
    report(10, "quantization_bound", None, &mut || c10_quantization(&runs));
    report(11, "importance_layer", Some(60), &mut c11_sensitivity);
    report(12, "constraint_cost_ordering", None, &mut || c12_cost(&runs));
    if failed == 0 {
        println!("acceptance: 12/12 passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} of 12 failed");
        ExitCode::FAILURE
    }
}
