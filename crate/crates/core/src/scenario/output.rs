//! File output. Every file is written in full to a temporary sibling and then
//! renamed into place, so readers never see a partial file.

use std::io::Write;
use std::path::Path;

use super::{ComparisonRow, LayerNormRecord, RoundRecord, ScenarioResult, SensitivitySummary};
use crate::error::{Error, Result};

pub const ROUNDS_CSV_HEADER: [&str; 9] = [
    "round",
    "accuracy",
    "backdoor_success",
    "attack_actual",
    "attack_flag",
    "n_removed",
    "ppv_running",
    "mult_count",
    "train_loss",
];

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Config(format!("csv buffer: {e}")))
}

fn round_row(r: &RoundRecord) -> Vec<String> {
    vec![
        r.round.to_string(),
        r.accuracy.to_string(),
        opt(r.backdoor_success),
        u8::from(r.attack_actual).to_string(),
        u8::from(r.attack_flag).to_string(),
        r.n_removed.to_string(),
        opt(r.ppv_running),
        opt(r.mult_count),
        opt(r.train_loss),
    ]
}

/// The trailing row: final accuracy and backdoor rate, counts of attacked and
/// flagged rounds, total removals, final PPV, total multiplications and the
/// final training loss.
fn summary_row(res: &ScenarioResult) -> Vec<String> {
    let s = &res.summary;
    let removed: usize = res.records.iter().map(|r| r.n_removed).sum();
    let mults: Option<u64> = res.records.iter().map(|r| r.mult_count).sum();
    vec![
        "summary".into(),
        s.final_accuracy.to_string(),
        opt(s.final_backdoor_success),
        s.attacked_rounds.to_string(),
        s.flagged_rounds.to_string(),
        removed.to_string(),
        opt(s.ppv),
        opt(mults.filter(|_| !res.records.is_empty())),
        opt(res.records.last().and_then(|r| r.train_loss)),
    ]
}

pub(super) fn rounds_csv(res: &ScenarioResult) -> Result<Vec<u8>> {
    let rows = res.records.iter().map(round_row).chain(std::iter::once(summary_row(res)));
    csv_bytes(&ROUNDS_CSV_HEADER, rows)
}

pub(super) fn write_result(dir: &Path, res: &ScenarioResult) -> Result<()> {
    write_atomic(&dir.join("config.toml"), res.config.to_toml()?.as_bytes())?;
    write_atomic(&dir.join("rounds.csv"), &rounds_csv(res)?)?;
    let mut jsonl = Vec::new();
    for r in &res.reports {
        serde_json::to_writer(&mut jsonl, r)?;
        jsonl.push(b'\n');
    }
    write_atomic(&dir.join("reports.jsonl"), &jsonl)?;
    for t in &res.transcripts {
        let path = dir.join("transcripts").join(format!("round_{:04}.json", t.header.round));
        write_atomic(&path, t.to_json()?.as_bytes())?;
    }
    write_atomic(&dir.join("summary.json"), &serde_json::to_vec_pretty(&res.summary)?)
}

pub(super) fn write_comparison(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let header = ["defense", "final_accuracy", "final_backdoor_success", "ppv", "success_rate"];
    let body = rows.iter().map(|r| {
        vec![
            r.defense.to_string(),
            r.final_accuracy.to_string(),
            opt(r.final_backdoor_success),
            opt(r.ppv),
            opt(r.success_rate),
        ]
    });
    write_atomic(path, &csv_bytes(&header, body)?)
}

pub(super) fn write_sensitivity(dir: &Path, records: &[LayerNormRecord], summary: &SensitivitySummary) -> Result<()> {
    let header = ["round", "client", "layer", "norm", "importance"];
    let body = records.iter().map(|r| {
        vec![
            r.round.to_string(),
            r.client.to_string(),
            r.layer.clone(),
            r.norm.to_string(),
            u8::from(r.importance).to_string(),
        ]
    });
    write_atomic(&dir.join("layer_norms.csv"), &csv_bytes(&header, body)?)?;
    write_atomic(&dir.join("sensitivity.json"), &serde_json::to_vec_pretty(summary)?)
}
