mod common;

use fedsentry::scenario::{simulate, ScenarioConfig};
use fedsentry::zk::{verify_chain, FieldChoice, Transcript, ZkConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn short_run(name: &str, seed: u64, rounds: usize, field: FieldChoice) -> (ScenarioConfig, Vec<Transcript>) {
    let mut cfg = common::config(name, seed);
    cfg.train.rounds = rounds;
    cfg.verify = true;
    cfg.zk.field = field;
    let res = simulate(&cfg).unwrap();
    assert_eq!(res.summary.transcripts_verified, rounds);
    (cfg, res.transcripts)
}

fn chain(cfg: &ScenarioConfig, ts: &[Transcript]) -> Result<(), usize> {
    let p = &cfg.defense.params;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    verify_chain(ts, p.gamma, p.lambda, cfg.zk, &mut rng)
        .map(|_| ())
        .map_err(|(i, _)| i)
}

#[test]
fn goldilocks_transcripts_verify() {
    let (cfg, ts) = short_run("ppv.toml", 4, 12, FieldChoice::Goldilocks);
    assert!(ts.iter().all(|t| t.header.modulus == FieldChoice::Goldilocks.modulus()));
    assert_eq!(chain(&cfg, &ts), Ok(()));
}

#[test]
fn chain_rejects_reordering_and_foreign_history() {
    let (cfg, ts) = short_run("cross_round.toml", 5, 8, FieldChoice::Mersenne61);
    assert_eq!(chain(&cfg, &ts), Ok(()));

    let mut swapped = ts.clone();
    swapped.swap(3, 4);
    assert!(chain(&cfg, &swapped).is_err());

    // same rounds from another seed cannot continue this history
    let (_, other) = short_run("cross_round.toml", 6, 8, FieldChoice::Mersenne61);
    let mut spliced = ts[..5].to_vec();
    spliced.extend_from_slice(&other[5..]);
    assert_eq!(chain(&cfg, &spliced), Err(5));
}

#[test]
fn verifier_uses_public_thresholds() {
    let (cfg, ts) = short_run("ppv.toml", 7, 6, FieldChoice::Mersenne61);
    let p = &cfg.defense.params;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(verify_chain(&ts, p.gamma + 0.1, p.lambda, cfg.zk, &mut rng).is_err());
    assert!(verify_chain(&ts, p.gamma, p.lambda * 2.0, cfg.zk, &mut rng).is_err());
    let coarse = ZkConfig {
        scale_bits: cfg.zk.scale_bits - 2,
        ..cfg.zk
    };
    assert!(verify_chain(&ts, p.gamma, p.lambda, coarse, &mut rng).is_err());
}

#[test]
fn transcripts_survive_a_file_roundtrip() {
    let (cfg, ts) = short_run("ppv.toml", 8, 3, FieldChoice::Mersenne61);
    let dir = tempfile::tempdir().unwrap();
    let loaded: Vec<Transcript> = ts
        .iter()
        .map(|t| {
            let path = dir.path().join(format!("round_{}.json", t.header.round));
            std::fs::write(&path, t.to_json().unwrap()).unwrap();
            Transcript::load(&path).unwrap()
        })
        .collect();
    assert_eq!(loaded, ts);
    assert_eq!(chain(&cfg, &loaded), Ok(()));
}

#[test]
fn flipped_decisions_are_rejected() {
    let (cfg, ts) = short_run("ppv.toml", 9, 5, FieldChoice::Mersenne61);
    let p = &cfg.defense.params;
    for (i, t) in ts.iter().enumerate() {
        let prev = i.checked_sub(1).map(|j| &ts[j]);
        let mut flag = t.clone();
        flag.claimed_report.attack_flag = !flag.claimed_report.attack_flag;
        assert!(
            common::verify_one(&flag, prev, p.gamma, p.lambda, 0).is_err(),
            "round {i} flag flip accepted"
        );

        if t.claimed_report.attack_flag {
            let mut spared = t.clone();
            let Some(&victim) = spared.claimed_report.removed.iter().next() else {
                continue;
            };
            spared.claimed_report.removed.remove(&victim);
            assert!(
                common::verify_one(&spared, prev, p.gamma, p.lambda, 0).is_err(),
                "round {i} spared client accepted"
            );
        }
    }
}

#[test]
fn random_mutations_are_rejected() {
    let (cfg, ts) = short_run("cross_round.toml", 10, 6, FieldChoice::Mersenne61);
    let p = &cfg.defense.params;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for k in 0..200u64 {
        let i = (k as usize) % ts.len();
        let prev = i.checked_sub(1).map(|j| &ts[j]);
        let json = common::mutate(&ts[i], &mut rng);
        if let Ok(m) = Transcript::from_json(&json) {
            assert!(
                common::verify_one(&m, prev, p.gamma, p.lambda, k).is_err(),
                "accepted mutation: {json}"
            );
        }
    }
}
