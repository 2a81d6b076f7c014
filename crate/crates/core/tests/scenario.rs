mod common;

use fedsentry::defense::DefenseKind;
use fedsentry::scenario::{compare_defenses, run_scenario, run_sensitivity, simulate, ScenarioConfig, ROUNDS_CSV_HEADER};
use fedsentry::threat::AttackKind;

fn small(name: &str, rounds: usize, dir: &std::path::Path) -> ScenarioConfig {
    let mut cfg = common::config(name, 3);
    cfg.train.rounds = rounds;
    cfg.output_dir = dir.to_path_buf();
    cfg
}

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("ppv.toml", 4, &dir.path().join("ppv"));
    let res = run_scenario(&cfg).unwrap();
    let out = res.output_dir.unwrap();
    for f in ["config.toml", "rounds.csv", "reports.jsonl", "summary.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    for r in 0..4 {
        assert!(out.join(format!("transcripts/round_{r:04}.json")).is_file());
    }
    let csv = std::fs::read_to_string(out.join("rounds.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], ROUNDS_CSV_HEADER.join(","));
    assert_eq!(lines.len(), 1 + 4 + 1);
    assert!(lines[5].starts_with("summary,"));
    assert_eq!(std::fs::read_to_string(out.join("reports.jsonl")).unwrap().lines().count(), 4);

    // the written config reproduces the run
    let again = simulate(&ScenarioConfig::load(out.join("config.toml")).unwrap()).unwrap();
    assert_eq!(again.records, res.records);
}

#[test]
fn runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("backdoor.toml", 6, dir.path());
    let a = simulate(&cfg).unwrap();
    let b = simulate(&cfg).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.reports, b.reports);
    assert_eq!(a.attacked, b.attacked);
    let mut other = cfg.clone();
    other.seed += 1;
    let other = other.resolved().unwrap();
    assert_ne!(simulate(&other).unwrap().records, a.records);
}

#[test]
fn comparison_matches_individual_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small("efficacy.toml", 5, &dir.path().join("cmp"));
    cfg.verify = false;
    let (rows, root) = compare_defenses(&cfg, &[DefenseKind::None, DefenseKind::Krum]).unwrap();
    assert!(root.join("comparison.csv").is_file());
    assert!(root.join("none/rounds.csv").is_file() && root.join("krum/rounds.csv").is_file());
    let mut solo = cfg.clone();
    solo.defense.kind = DefenseKind::None;
    let single = simulate(&solo).unwrap().summary;
    assert_eq!(rows[0].defense, DefenseKind::None);
    assert_eq!(rows[0].final_accuracy, single.final_accuracy);
    assert_eq!(rows[0].ppv, single.ppv);
}

#[test]
fn backdoor_needs_the_defense() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small("backdoor.toml", 30, dir.path());
    cfg.seed = 1;
    let cfg = cfg.resolved().unwrap();
    let mut open = cfg.clone();
    open.defense.kind = DefenseKind::None;
    let open = simulate(&open).unwrap().summary;
    let guarded = simulate(&cfg).unwrap().summary;
    let hit = |s: &fedsentry::scenario::ScenarioSummary| s.final_backdoor_success.unwrap();
    assert!(hit(&open) > 0.5, "undefended backdoor success {}", hit(&open));
    assert!(
        hit(&guarded) < hit(&open),
        "defended {} vs undefended {}",
        hit(&guarded),
        hit(&open)
    );
}

#[test]
fn benign_runs_report_no_detection_metrics_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("benign.toml", 5, dir.path());
    assert_eq!(cfg.threat.attack_kind, AttackKind::None);
    let res = simulate(&cfg).unwrap();
    assert_eq!(res.summary.attacked_rounds, 0);
    assert!(res.records.iter().all(|r| !r.attack_actual));
    assert!(res.summary.final_accuracy > 0.9);
}

#[test]
fn sensitivity_writes_layer_norms() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("sensitivity.toml", 2, &dir.path().join("sens"));
    let (summary, out) = run_sensitivity(&cfg).unwrap();
    assert_eq!(summary.pairs, 2 * cfg.train.n_clients);
    let csv = std::fs::read_to_string(out.join("layer_norms.csv")).unwrap();
    assert!(csv.lines().count() > summary.pairs);
    assert!(out.join("sensitivity.json").is_file());
}

#[test]
fn invalid_configs_are_refused() {
    let base = std::fs::read_to_string(common::config_path("ppv.toml")).unwrap();
    let bad_gamma = base.replace("gamma = 0.5", "gamma = 1.5");
    assert!(ScenarioConfig::from_toml(&bad_gamma).unwrap_err().to_string().contains("gamma"));
    let unknown = format!("bogus = 1\n{base}");
    assert!(ScenarioConfig::from_toml(&unknown).is_err());
    let unknown = format!("{base}\nkrum_n = 3\n");
    assert!(ScenarioConfig::from_toml(&unknown).is_err());
    let mismatch = base.replace("[partition]\nn_clients = 10", "[partition]\nn_clients = 9");
    assert!(ScenarioConfig::from_toml(&mismatch).is_err());
    assert!(ScenarioConfig::load(common::config_path("mnist.toml")).is_err());
}
