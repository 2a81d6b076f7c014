//! Client side: check the header, commitments and chain links, then replay
//! the circuit against the transcript's records.

use std::fmt;

use rand::RngCore;

use super::circuit::{self, coordinate_bits, Circuit, Fault, Hints, Layout, Mode, Program};
use super::field::{modulus_bits, GOLDILOCKS, MERSENNE_61};
use super::fixed::quantize_raw;
use super::transcript::{Commitment, MultCount, Transcript, VectorLabel, DIGEST_NAME, TRANSCRIPT_VERSION};
use super::{FieldChoice, ZkConfig};

/// What the verifier knows independently of the transcript.
#[derive(Debug, Clone, Copy)]
pub struct PublicInputs<'a> {
    pub gamma: f64,
    pub lambda: f64,
    pub zk: ZkConfig,
    /// Expected round number, if known.
    pub round: Option<usize>,
    /// The previous round's transcript, to check the cached references
    /// against what that round committed.
    pub prev: Option<&'a Transcript>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    pub marginal: bool,
    pub mult_count: MultCount,
}

/// First failing check. `index` is the gadget record (or, for commitment
/// failures, the vector) at fault; `None` for transcript-level fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub index: Option<usize>,
    pub kind: String,
    pub reason: String,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "rejected at {} #{i}: {}", self.kind, self.reason),
            None => write!(f, "rejected ({}): {}", self.kind, self.reason),
        }
    }
}

impl std::error::Error for Rejection {}

fn reject(index: Option<usize>, kind: &str, reason: impl Into<String>) -> Rejection {
    Rejection {
        index,
        kind: kind.into(),
        reason: reason.into(),
    }
}

pub fn verify_detection(t: &Transcript, public: &PublicInputs<'_>, rng: &mut dyn RngCore) -> Result<Verdict, Rejection> {
    match FieldChoice::from_modulus(t.header.modulus) {
        Some(FieldChoice::Mersenne61) => verify_in::<MERSENNE_61>(t, public, rng),
        Some(FieldChoice::Goldilocks) => verify_in::<GOLDILOCKS>(t, public, rng),
        None => Err(reject(None, "header", format!("unsupported modulus {}", t.header.modulus))),
    }
}

/// Verifies consecutive transcripts, each against its predecessor. Returns
/// the position of the first rejected transcript.
pub fn verify_chain(
    ts: &[Transcript],
    gamma: f64,
    lambda: f64,
    zk: ZkConfig,
    rng: &mut dyn RngCore,
) -> Result<Vec<Verdict>, (usize, Rejection)> {
    let mut out = Vec::with_capacity(ts.len());
    for (i, t) in ts.iter().enumerate() {
        let public = PublicInputs {
            gamma,
            lambda,
            zk,
            round: None,
            prev: i.checked_sub(1).map(|j| &ts[j]),
        };
        out.push(verify_detection(t, &public, rng).map_err(|r| (i, r))?);
    }
    Ok(out)
}

fn check_header(t: &Transcript, public: &PublicInputs<'_>) -> Result<(), Rejection> {
    let h = &t.header;
    let zk = &public.zk;
    let header = |reason: String| Err(reject(None, "header", reason));
    if h.version != TRANSCRIPT_VERSION || h.digest != DIGEST_NAME {
        return header(format!("version {} / digest {:?} not supported", h.version, h.digest));
    }
    if h.modulus != zk.field.modulus() || h.scale_bits != zk.scale_bits {
        return header(format!(
            "field ({}, 2^{}) differs from the agreed parameters",
            h.modulus, h.scale_bits
        ));
    }
    if let Some(r) = public.round {
        if h.round != r {
            return header(format!("round {} where {r} was expected", h.round));
        }
    }
    let bits = modulus_bits(h.modulus);
    let q = |x: f64| quantize_raw(x, zk.scale_bits, bits).map_err(|e| reject(None, "header", e.to_string()));
    let p = &t.params;
    if p.gamma_raw != q(public.gamma)? || p.lambda_raw != q(public.lambda)? {
        return header("gamma or lambda differs from the agreed thresholds".into());
    }
    if p.freivalds_reps != zk.freivalds_reps || p.margin_ulps != zk.margin_ulps {
        return header("freivalds repetitions or margin differ from the agreed values".into());
    }
    Ok(())
}

fn check_vectors(t: &Transcript) -> Result<(), Rejection> {
    let bits = modulus_bits(t.header.modulus);
    let dim = t.vectors.first().map_or(0, |v| v.values.len());
    let limit = 1i64 << coordinate_bits(bits, dim.max(1));
    for (i, v) in t.vectors.iter().enumerate() {
        if Commitment::of(t.header.modulus, t.header.scale_bits, &v.values) != v.commitment {
            return Err(reject(Some(i), "commitment", format!("{:?} does not open to its values", v.label)));
        }
        if v.values.iter().any(|x| x.abs() >= limit) {
            return Err(reject(
                Some(i),
                "commitment",
                format!("{:?} has a coordinate outside ±{limit}", v.label),
            ));
        }
    }
    Ok(())
}

fn check_chain(t: &Transcript, prev: &Transcript) -> Result<(), Rejection> {
    let chain = |reason: String| Err(reject(None, "chain", reason));
    if t.header.round != prev.header.round + 1 {
        return chain(format!("round {} does not follow round {}", t.header.round, prev.header.round));
    }
    let commitment = |tr: &Transcript, l: VectorLabel| tr.vector(l).map(|v| v.commitment);
    let (expected_global, expected_avg) = match commitment(prev, VectorLabel::Output) {
        Some(out) => (Some(out), Some(out)),
        None => (commitment(prev, VectorLabel::PrevGlobal), commitment(prev, VectorLabel::PrevAvg)),
    };
    if commitment(t, VectorLabel::PrevGlobal) != expected_global {
        return chain("cached global segment is not the previous round's output".into());
    }
    if commitment(t, VectorLabel::PrevAvg) != expected_avg {
        return chain("cached w_avg is not the previous round's aggregate".into());
    }
    let cached: Vec<usize> = t
        .vectors
        .iter()
        .filter_map(|v| match v.label {
            VectorLabel::PrevClient(id) => Some(id),
            _ => None,
        })
        .collect();
    let survivors = prev.survivors();
    if cached != survivors {
        return chain(format!(
            "cached clients {cached:?} differ from last round's survivors {survivors:?}"
        ));
    }
    for id in survivors {
        if commitment(t, VectorLabel::PrevClient(id)) != commitment(prev, VectorLabel::Update(id)) {
            return chain(format!("cached segment of client {id} is not what it submitted"));
        }
    }
    Ok(())
}

fn verify_in<const P: u64>(t: &Transcript, public: &PublicInputs<'_>, rng: &mut dyn RngCore) -> Result<Verdict, Rejection> {
    check_header(t, public)?;
    check_vectors(t)?;
    if let Some(prev) = public.prev {
        check_chain(t, prev)?;
    }
    let layout = Layout::from_vectors(&t.vectors).map_err(|r| reject(None, "structure", r))?;
    let program = Program {
        round: t.header.round,
        gamma: public.gamma,
        lambda: public.lambda,
        gamma_raw: i128::from(t.params.gamma_raw),
        lambda_raw: i128::from(t.params.lambda_raw),
        weights: &t.aggregation_weights,
        report: &t.claimed_report,
    };
    let mode = Mode::Replay { records: &t.records, rng };
    let mut c = Circuit::<P>::new(mode, &t.vectors, t.header.scale_bits, t.params.freivalds_reps, t.params.margin_ulps);
    circuit::run(&mut c, &layout, &program, Hints::default()).map_err(|f| match f {
        Fault::Reject { index, kind, reason } => Rejection { index, kind, reason },
        Fault::Prover(m) => reject(None, "internal", m),
    })?;
    if c.remaining() > 0 {
        let idx = t.records.len() - c.remaining();
        return Err(reject(
            Some(idx),
            t.records[idx].gadget.kind(),
            "record beyond the end of the circuit",
        ));
    }
    if c.counts != t.mult_count {
        return Err(reject(
            None,
            "mult_count",
            format!("transcript claims {:?}, replay tallies {:?}", t.mult_count, c.counts),
        ));
    }
    if c.marginal != t.marginal {
        return Err(reject(None, "marginal", "marginal flag differs from the replay"));
    }
    Ok(Verdict {
        marginal: c.marginal,
        mult_count: c.counts,
    })
}
