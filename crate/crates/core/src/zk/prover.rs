//! Server side: quantize, commit, and evaluate the detection circuit.

use std::collections::BTreeMap;

use super::circuit::{self, coordinate_bits, Circuit, Fault, Hints, Layout, Mode, Program};
use super::field::{Fp, GOLDILOCKS, MERSENNE_61};
use super::fixed::quantize_raw;
use super::transcript::{Commitment, CommittedVector, Header, PublicParams, Transcript, VectorLabel, DIGEST_NAME, TRANSCRIPT_VERSION};
use super::{FieldChoice, ZkConfig};
use crate::defense::{krum_select, round_zero_reference, DefenseParams};
use crate::engine::ReferenceCache;
use crate::error::{Error, Result};
use crate::{DetectionReport, ParamVector};

/// Floating-point inputs of one detection round.
#[derive(Debug, Clone)]
pub struct RoundInputs<'a> {
    pub round: usize,
    /// `(client id, importance segment, shard size)`.
    pub updates: Vec<(usize, &'a ParamVector, usize)>,
    pub cache: &'a ReferenceCache<f64>,
    /// Segment of the aggregated global model; `None` when every update was
    /// removed.
    pub output: Option<&'a ParamVector>,
    pub sample_weighted: bool,
}

/// Builds the transcript for a round the defense has already decided.
/// Fails with [`Error::ProverInconsistency`] if the fixed-point evaluation
/// contradicts the report outside the rounding margin.
pub fn prove_detection(inputs: &RoundInputs<'_>, report: &DetectionReport, params: &DefenseParams, cfg: &ZkConfig) -> Result<Transcript> {
    cfg.validate()?;
    match cfg.field {
        FieldChoice::Mersenne61 => prove_in::<MERSENNE_61>(inputs, report, params, cfg),
        FieldChoice::Goldilocks => prove_in::<GOLDILOCKS>(inputs, report, params, cfg),
    }
}

fn prove_in<const P: u64>(
    inputs: &RoundInputs<'_>,
    report: &DetectionReport,
    params: &DefenseParams,
    cfg: &ZkConfig,
) -> Result<Transcript> {
    let bits = Fp::<P>::BITS;
    let s = cfg.scale_bits;
    let mut updates = inputs.updates.clone();
    updates.sort_by_key(|u| u.0);
    let dim = updates.first().ok_or(Error::EmptyAggregation)?.1.len();
    let coord_limit = 1i64 << coordinate_bits(bits, dim);

    let mut vectors = Vec::new();
    let mut commit = |label: VectorLabel, v: &ParamVector| -> Result<()> {
        if v.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                actual: v.len(),
            });
        }
        let values = v.iter().map(|&x| quantize_raw(x, s, bits)).collect::<Result<Vec<i64>>>()?;
        if let Some(x) = values.iter().find(|x| x.abs() >= coord_limit) {
            return Err(Error::Range(format!(
                "{label:?} coordinate {} exceeds ±{} at dimension {dim}",
                *x as f64 / f64::from(1u32 << s),
                coord_limit as f64 / f64::from(1u32 << s)
            )));
        }
        vectors.push(CommittedVector {
            label,
            commitment: Commitment::of(P, s, &values),
            values,
        });
        Ok(())
    };

    for &(id, seg, _) in &updates {
        commit(VectorLabel::Update(id), seg)?;
    }
    let cache = inputs.cache;
    if inputs.round > 0 {
        if let Some(g) = &cache.prev_global {
            commit(VectorLabel::PrevGlobal, g)?;
        }
        for (&id, seg) in &cache.prev_client {
            commit(VectorLabel::PrevClient(id), seg)?;
        }
        if let Some(avg) = &cache.prev_avg {
            commit(VectorLabel::PrevAvg, avg)?;
        }
    }
    let mut hints = Hints::default();
    if inputs.round == 0 || cache.prev_avg.is_none() {
        let segs: Vec<(usize, &ParamVector)> = updates.iter().map(|&(id, seg, _)| (id, seg)).collect();
        let reference = round_zero_reference(&segs)?;
        commit(VectorLabel::Reference, &reference)?;
        if segs.len() >= 3 {
            let half = segs.len() / 2;
            hints.krum_selected = Some(krum_select(&segs, half.max(1), half)?);
        }
    }
    if let Some(out) = inputs.output {
        commit(VectorLabel::Output, out)?;
    }

    // only survivors are aggregated, so only they carry a weight
    let weights: BTreeMap<usize, u64> = updates
        .iter()
        .filter(|(id, _, _)| inputs.output.is_some() && !report.removed.contains(id))
        .map(|&(id, _, n)| (id, if inputs.sample_weighted { (n as u64).max(1) } else { 1 }))
        .collect();
    let public = PublicParams {
        gamma_raw: quantize_raw(params.gamma, s, bits)?,
        lambda_raw: quantize_raw(params.lambda, s, bits)?,
        freivalds_reps: cfg.freivalds_reps,
        margin_ulps: cfg.margin_ulps,
    };
    let layout = Layout::from_vectors(&vectors).map_err(Error::ProverInconsistency)?;
    let program = Program {
        round: inputs.round,
        gamma: params.gamma,
        lambda: params.lambda,
        gamma_raw: i128::from(public.gamma_raw),
        lambda_raw: i128::from(public.lambda_raw),
        weights: &weights,
        report,
    };
    let mut c = Circuit::<P>::new(Mode::Prove, &vectors, s, cfg.freivalds_reps, cfg.margin_ulps);
    circuit::run(&mut c, &layout, &program, hints).map_err(|f| match f {
        Fault::Prover(m) => Error::ProverInconsistency(m),
        Fault::Reject { kind, reason, .. } => Error::ProverInconsistency(format!("{kind}: {reason}")),
    })?;
    let (records, marginal, mult_count) = (c.records, c.marginal, c.counts);
    Ok(Transcript {
        header: Header {
            version: TRANSCRIPT_VERSION,
            modulus: P,
            scale_bits: s,
            round: inputs.round,
            digest: DIGEST_NAME.into(),
        },
        params: public,
        aggregation_weights: weights,
        vectors,
        records,
        claimed_report: report.clone(),
        marginal,
        mult_count,
    })
}
