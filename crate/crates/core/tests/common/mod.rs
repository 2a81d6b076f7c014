#![allow(dead_code)]

use std::path::PathBuf;

use fedsentry::scenario::ScenarioConfig;
use fedsentry::zk::{self, PublicInputs, Transcript, ZkConfig};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

/// A shipped config with its seed replaced and files kept in memory.
pub fn config(name: &str, seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::load(config_path(name)).unwrap();
    cfg.seed = seed;
    cfg.resolved().unwrap()
}

pub fn verify_one(t: &Transcript, prev: Option<&Transcript>, gamma: f64, lambda: f64, seed: u64) -> Result<zk::Verdict, zk::Rejection> {
    let public = PublicInputs {
        gamma,
        lambda,
        zk: ZkConfig::default(),
        round: Some(t.header.round),
        prev,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    zk::verify_detection(t, &public, &mut rng)
}

const TAGS: &[(&str, &[&str])] = &[
    ("stage", &["cross_round", "cross_client", "aggregation"]),
    (
        "kind",
        &[
            "dot",
            "product",
            "isqrt",
            "division",
            "freivalds",
            "krum_selection",
            "comparison",
            "aggregation",
        ],
    ),
    ("check", &["cosine_global", "cosine_self", "removal"]),
    ("role", &["update", "prev_global", "prev_client", "prev_avg", "reference", "output"]),
    ("digest", &["sha256", "sha512"]),
];

/// Every integer, bool or string leaf under `v`, as JSON pointer paths.
/// Floats are skipped: they carry tolerance-checked float claims, where a
/// low-bit flip is not a meaningful tamper.
fn leaves(v: &Value, path: String, out: &mut Vec<String>) {
    match v {
        Value::Object(m) => m.iter().for_each(|(k, x)| leaves(x, format!("{path}/{k}"), out)),
        Value::Array(a) => a.iter().enumerate().for_each(|(i, x)| leaves(x, format!("{path}/{i}"), out)),
        Value::Number(n) if n.is_f64() => {}
        Value::Null => {}
        _ => out.push(path),
    }
}

fn flip_leaf(v: &mut Value, key: &str, rng: &mut impl Rng) {
    match v {
        Value::Bool(b) => *b = !*b,
        Value::Number(n) => {
            if let Some(x) = n.as_i64() {
                let width = (64 - x.unsigned_abs().leading_zeros()).clamp(4, 40) + 2;
                *v = Value::from(x ^ (1i64 << rng.random_range(0..width)));
            } else if let Some(x) = n.as_u64() {
                *v = Value::from(x ^ (1u64 << rng.random_range(0..63)));
            }
        }
        Value::String(s) => match TAGS.iter().find(|(k, _)| *k == key) {
            Some((_, options)) => {
                let others: Vec<&&str> = options.iter().filter(|o| **o != s.as_str()).collect();
                *s = (**others.choose(rng).unwrap()).to_string();
            }
            None => {
                let mut bytes = s.clone().into_bytes();
                if bytes.is_empty() {
                    bytes.push(b'0');
                } else {
                    let i = rng.random_range(0..bytes.len());
                    bytes[i] = if bytes[i] == b'0' { b'1' } else { b'0' };
                }
                *s = String::from_utf8(bytes).unwrap();
            }
        },
        _ => unreachable!(),
    }
}

fn mutate_leaf_under(root: &mut Value, base: &str, rng: &mut impl Rng) -> bool {
    let Some(sub) = root.pointer(base) else { return false };
    let mut paths = Vec::new();
    leaves(sub, String::new(), &mut paths);
    let Some(p) = paths.choose(rng) else { return false };
    let key = p.rsplit('/').next().unwrap().to_string();
    let full = format!("{base}{p}");
    flip_leaf(root.pointer_mut(&full).unwrap(), &key, rng);
    true
}

/// One random single-record or single-field mutation of `t`, as JSON text.
pub fn mutate(t: &Transcript, rng: &mut impl Rng) -> String {
    let original = serde_json::to_value(t).unwrap();
    loop {
        let mut v = original.clone();
        let n_rec = v["records"].as_array().unwrap().len();
        let n_vec = v["vectors"].as_array().unwrap().len();
        let done = match rng.random_range(0..8) {
            0 | 1 => mutate_leaf_under(&mut v, &format!("/records/{}", rng.random_range(0..n_rec)), rng),
            2 => {
                let recs = v["records"].as_array_mut().unwrap();
                let i = rng.random_range(0..n_rec);
                match rng.random_range(0..3) {
                    0 => {
                        recs.remove(i);
                    }
                    1 => {
                        let r = recs[i].clone();
                        recs.insert(i, r);
                    }
                    _ if i + 1 < n_rec => recs.swap(i, i + 1),
                    _ => recs.swap(i, i - 1),
                }
                true
            }
            3 => {
                let i = rng.random_range(0..n_vec);
                let vals = v["vectors"][i]["values"].as_array_mut().unwrap();
                let j = rng.random_range(0..vals.len());
                let x = vals[j].as_i64().unwrap();
                vals[j] = Value::from(x ^ (1i64 << rng.random_range(0..40)));
                true
            }
            4 => {
                let i = rng.random_range(0..n_vec);
                let field = if rng.random_bool(0.5) { "commitment" } else { "label" };
                mutate_leaf_under(&mut v, &format!("/vectors/{i}/{field}"), rng)
            }
            5 => {
                let part = ["/header", "/params", "/mult_count", "/aggregation_weights"].choose(rng).unwrap();
                mutate_leaf_under(&mut v, part, rng)
            }
            6 => {
                let b = v["marginal"].as_bool().unwrap();
                v["marginal"] = Value::from(!b);
                true
            }
            _ => mutate_report(&mut v, rng),
        };
        if done && v != original {
            return serde_json::to_string(&v).unwrap();
        }
    }
}

fn mutate_report(v: &mut Value, rng: &mut impl Rng) -> bool {
    let report = &mut v["claimed_report"];
    match rng.random_range(0..4) {
        0 => {
            let f = report["attack_flag"].as_bool().unwrap();
            report["attack_flag"] = Value::from(!f);
        }
        1 => {
            let ids: Vec<u64> = report["cross_round_scores"]
                .as_object()
                .map(|m| m.keys().map(|k| k.parse().unwrap()).collect())
                .unwrap_or_default();
            let id = ids.choose(rng).copied().unwrap_or(0);
            let removed = report["removed"].as_array_mut().unwrap();
            match removed.iter().position(|x| x.as_u64() == Some(id)) {
                Some(p) => {
                    removed.remove(p);
                }
                None => {
                    removed.push(Value::from(id));
                    removed.sort_by_key(|x| x.as_u64());
                }
            }
        }
        2 => {
            let r = report["round"].as_u64().unwrap();
            report["round"] = Value::from(r ^ (1 << rng.random_range(0..8)));
        }
        _ => {
            let Some(scores) = report["cross_round_scores"].as_object_mut() else {
                return false;
            };
            let keys: Vec<String> = scores.keys().cloned().collect();
            let Some(k) = keys.choose(rng) else { return false };
            let s = &mut scores[k]["sim_to_prev_self"];
            *s = if s.is_null() { Value::from(0.99) } else { Value::Null };
        }
    }
    true
}

/// Coefficient of determination of the least-squares line through `pts`.
pub fn r_squared(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    sxy * sxy / (sxx * syy)
}
