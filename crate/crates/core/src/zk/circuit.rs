//! The detection circuit, written once and run in two modes.
//!
//! Proving evaluates every gadget and appends a record. Replaying walks the
//! same program, pops the next record at every gadget, checks that its inputs
//! match the wiring the program expects, checks the gadget relation, and
//! continues with the record's witness. Structure, wiring and the
//! multiplication tally therefore cannot drift between prover and verifier.

use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;

use super::field::Fp;
use super::fixed::raw_limit;
use super::gadgets::{division_check, floor_divmod, freivalds_check, freivalds_cost, isqrt, isqrt_check, FieldMatrix};
use super::transcript::{CommittedVector, Gadget, GadgetRecord, MultCount, Purpose, Stage, VectorLabel};
use crate::defense::krum_neighbor_count;
use crate::DetectionReport;

/// Why a run stopped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Fault {
    /// Replay found a bad record (`index`) or a bad transcript-level field.
    Reject {
        index: Option<usize>,
        kind: String,
        reason: String,
    },
    /// The prover's own fixed-point evaluation disagrees with the report.
    Prover(String),
}

type Step<T> = std::result::Result<T, Fault>;

pub(crate) enum Mode<'a> {
    Prove,
    Replay {
        records: &'a [GadgetRecord],
        rng: &'a mut dyn RngCore,
    },
}

/// Decisions the prover takes from the floating-point run.
#[derive(Debug, Clone, Default)]
pub(crate) struct Hints {
    pub krum_selected: Option<Vec<usize>>,
}

/// Positions of the committed vectors by role.
#[derive(Debug, Clone, Default)]
pub(crate) struct Layout {
    pub updates: Vec<(usize, usize)>,
    pub prev_global: Option<usize>,
    pub prev_client: BTreeMap<usize, usize>,
    pub prev_avg: Option<usize>,
    pub reference: Option<usize>,
    pub output: Option<usize>,
    pub dim: usize,
}

impl Layout {
    pub fn from_vectors(vectors: &[CommittedVector]) -> std::result::Result<Self, String> {
        let mut l = Layout::default();
        let mut seen = BTreeSet::new();
        for (i, v) in vectors.iter().enumerate() {
            if !seen.insert(v.label) {
                return Err(format!("vector {i} repeats label {:?}", v.label));
            }
            if i == 0 {
                l.dim = v.values.len();
            } else if v.values.len() != l.dim {
                return Err(format!("vector {i} has length {} instead of {}", v.values.len(), l.dim));
            }
            match v.label {
                VectorLabel::Update(id) => l.updates.push((id, i)),
                VectorLabel::PrevGlobal => l.prev_global = Some(i),
                VectorLabel::PrevClient(id) => {
                    l.prev_client.insert(id, i);
                }
                VectorLabel::PrevAvg => l.prev_avg = Some(i),
                VectorLabel::Reference => l.reference = Some(i),
                VectorLabel::Output => l.output = Some(i),
            }
        }
        if l.dim == 0 {
            return Err("committed vectors are empty".into());
        }
        l.updates.sort_unstable();
        Ok(l)
    }

    pub fn ids(&self) -> Vec<usize> {
        self.updates.iter().map(|&(id, _)| id).collect()
    }
}

/// Bits allowed per committed coordinate so that every Gram entry, and sums
/// of a few of them, stay below the field's signed range.
pub(crate) fn coordinate_bits(field_bits: u32, dim: usize) -> u32 {
    let log_d = usize::BITS - dim.saturating_sub(1).leading_zeros();
    (field_bits.saturating_sub(4 + log_d)) / 2
}

pub(crate) struct Circuit<'a, const P: u64> {
    mode: Mode<'a>,
    vectors: &'a [CommittedVector],
    pub records: Vec<GadgetRecord>,
    cursor: usize,
    stage: Stage,
    pub counts: MultCount,
    pub marginal: bool,
    scale_bits: u32,
    reps: usize,
    margin: i128,
    limit: i128,
}

impl<'a, const P: u64> Circuit<'a, P> {
    pub fn new(mode: Mode<'a>, vectors: &'a [CommittedVector], scale_bits: u32, reps: usize, margin: i64) -> Self {
        Self {
            mode,
            vectors,
            records: Vec::new(),
            cursor: 0,
            stage: Stage::CrossRound,
            counts: MultCount::default(),
            marginal: false,
            scale_bits,
            reps,
            margin: i128::from(margin),
            limit: raw_limit(Fp::<P>::BITS),
        }
    }

    pub fn remaining(&self) -> usize {
        match &self.mode {
            Mode::Prove => 0,
            Mode::Replay { records, .. } => records.len() - self.cursor,
        }
    }

    fn cmp_cost(&self) -> u64 {
        u64::from(Fp::<P>::BITS - 1)
    }

    fn reject(&self, index: Option<usize>, kind: &str, reason: impl Into<String>) -> Fault {
        Fault::Reject {
            index,
            kind: kind.into(),
            reason: reason.into(),
        }
    }

    fn fail(&self, kind: &str, reason: impl Into<String>) -> Fault {
        match self.mode {
            Mode::Prove => Fault::Prover(format!("{kind}: {}", reason.into())),
            Mode::Replay { .. } => self.reject(None, kind, reason),
        }
    }

    /// Pops the next record in replay mode, checking its stage and kind.
    fn next(&mut self, kind: &'static str) -> Step<(usize, Gadget)> {
        let Mode::Replay { records, .. } = &self.mode else {
            unreachable!("next() is replay-only");
        };
        let idx = self.cursor;
        let rec = records
            .get(idx)
            .ok_or_else(|| self.reject(Some(idx), kind, "transcript ends early"))?;
        if rec.gadget.kind() != kind || rec.stage != self.stage {
            return Err(self.reject(
                Some(idx),
                rec.gadget.kind(),
                format!(
                    "expected {kind} in stage {:?}, found {} in {:?}",
                    self.stage,
                    rec.gadget.kind(),
                    rec.stage
                ),
            ));
        }
        self.cursor += 1;
        Ok((idx, rec.gadget.clone()))
    }

    fn push(&mut self, gadget: Gadget) {
        self.records.push(GadgetRecord { stage: self.stage, gadget });
    }

    fn proving(&self) -> bool {
        matches!(self.mode, Mode::Prove)
    }

    fn in_range(&self, v: i128) -> bool {
        v.abs() < self.limit
    }

    fn range(&self, idx: Option<usize>, kind: &str, vals: &[i128]) -> Step<()> {
        if let Some(v) = vals.iter().find(|v| !self.in_range(**v)) {
            return Err(match self.mode {
                Mode::Prove => Fault::Prover(format!("{kind} value {v} outside the field's signed range")),
                Mode::Replay { .. } => self.reject(idx, kind, format!("value {v} outside the signed range")),
            });
        }
        Ok(())
    }

    fn wiring(&self, idx: usize, kind: &str, ok: bool) -> Step<()> {
        if ok {
            Ok(())
        } else {
            Err(self.reject(Some(idx), kind, "inputs do not match the circuit wiring"))
        }
    }

    pub fn set_stage(&mut self, stage: Stage) {
        self.stage = stage;
    }

    pub fn one(&self) -> i128 {
        1i128 << self.scale_bits
    }

    fn values(&self, v: usize) -> &'a [i64] {
        &self.vectors[v].values
    }

    fn integer_dot(&self, a: usize, b: usize) -> Option<i128> {
        self.values(a)
            .iter()
            .zip(self.values(b))
            .try_fold(0i128, |acc, (&x, &y)| acc.checked_add(i128::from(x) * i128::from(y)))
    }

    pub fn dot(&mut self, a: usize, b: usize) -> Step<i128> {
        let len = self.values(a).len() as u64;
        self.counts.add(self.stage, len);
        let exact = self.integer_dot(a, b);
        if self.proving() {
            let v = exact.ok_or_else(|| Fault::Prover("dot product overflow".into()))?;
            self.range(None, "dot", &[v])?;
            self.push(Gadget::Dot { a, b, value: v as i64 });
            return Ok(v);
        }
        let (idx, g) = self.next("dot")?;
        let Gadget::Dot { a: ra, b: rb, value } = g else { unreachable!() };
        self.wiring(idx, "dot", ra == a && rb == b)?;
        let field = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .fold(Fp::<P>::zero(), |acc, (&x, &y)| acc + Fp::from_i64(x) * Fp::from_i64(y));
        let value = i128::from(value);
        self.range(Some(idx), "dot", &[value])?;
        if field != Fp::from_i128(value) || exact != Some(value) {
            return Err(self.reject(Some(idx), "dot", "claimed inner product is wrong"));
        }
        Ok(value)
    }

    pub fn product(&mut self, a: i128, b: i128) -> Step<i128> {
        self.counts.add(self.stage, 1);
        if self.proving() {
            let v = a * b;
            self.range(None, "product", &[v])?;
            self.push(Gadget::Product {
                a: a as i64,
                b: b as i64,
                value: v as i64,
            });
            return Ok(v);
        }
        let (idx, g) = self.next("product")?;
        let Gadget::Product { a: ra, b: rb, value } = g else {
            unreachable!()
        };
        self.wiring(idx, "product", i128::from(ra) == a && i128::from(rb) == b)?;
        let value = i128::from(value);
        self.range(Some(idx), "product", &[value])?;
        if a.checked_mul(b) != Some(value) {
            return Err(self.reject(Some(idx), "product", "claimed product is wrong"));
        }
        Ok(value)
    }

    pub fn isqrt(&mut self, y: i128) -> Step<i128> {
        self.counts.add(self.stage, 2);
        if self.proving() {
            if y < 0 {
                return Err(Fault::Prover(format!("square root of negative value {y}")));
            }
            let x = isqrt(y);
            self.push(Gadget::Isqrt { y: y as i64, x: x as i64 });
            return Ok(x);
        }
        let (idx, g) = self.next("isqrt")?;
        let Gadget::Isqrt { y: ry, x } = g else { unreachable!() };
        self.wiring(idx, "isqrt", i128::from(ry) == y)?;
        let x = i128::from(x);
        if !isqrt_check(y, x) {
            return Err(self.reject(Some(idx), "isqrt", format!("{x} is not the square root of {y}")));
        }
        Ok(x)
    }

    /// `⌊a / b⌋` for `b > 0`.
    pub fn div(&mut self, a: i128, b: i128) -> Step<i128> {
        self.counts.add(self.stage, 1);
        if b <= 0 {
            return Err(self.fail("division", format!("non-positive divisor {b}")));
        }
        if self.proving() {
            let (q, r) = floor_divmod(a, b);
            self.range(None, "division", &[a, b, q, r])?;
            self.push(Gadget::Division {
                a: a as i64,
                b: b as i64,
                q: q as i64,
                r: r as i64,
            });
            return Ok(q);
        }
        let (idx, g) = self.next("division")?;
        let Gadget::Division { a: ra, b: rb, q, r } = g else {
            unreachable!()
        };
        self.wiring(idx, "division", i128::from(ra) == a && i128::from(rb) == b)?;
        let (q, r) = (i128::from(q), i128::from(r));
        self.range(Some(idx), "division", &[q, r])?;
        if !division_check(a, b, q, r) {
            return Err(self.reject(Some(idx), "division", format!("{a} != {q}·{b} + {r} with 0 <= r < b")));
        }
        Ok(q)
    }

    /// Compares `lhs < rhs`. A comparison bound to a reported float decision
    /// (`hint` is set) may go either way inside the margin, which marks the
    /// round marginal; everywhere else the claim must equal the fixed-point
    /// truth. Returns the claimed outcome.
    pub fn less(&mut self, lhs: i128, rhs: i128, purpose: Purpose, hint: Option<bool>) -> Step<bool> {
        let cost = self.cmp_cost();
        self.counts.add(self.stage, cost);
        let truth = lhs < rhs;
        let near = hint.is_some() && (lhs - rhs).abs() < self.margin;
        let claimed = if self.proving() {
            let claimed = hint.unwrap_or(truth);
            if !near && claimed != truth {
                return Err(Fault::Prover(format!(
                    "{purpose:?}: fixed point says {truth}, report says {claimed} ({lhs} vs {rhs})"
                )));
            }
            self.push(Gadget::Comparison {
                lhs: lhs as i64,
                rhs: rhs as i64,
                less: claimed,
                purpose,
            });
            claimed
        } else {
            let (idx, g) = self.next("comparison")?;
            let Gadget::Comparison {
                lhs: rl,
                rhs: rr,
                less,
                purpose: rp,
            } = g
            else {
                unreachable!()
            };
            self.wiring(idx, "comparison", i128::from(rl) == lhs && i128::from(rr) == rhs && rp == purpose)?;
            if !near && less != truth {
                return Err(self.reject(Some(idx), "comparison", format!("{lhs} < {rhs} is {truth}, record claims {less}")));
            }
            less
        };
        if near {
            self.marginal = true;
        }
        Ok(claimed)
    }

    /// Gram matrix of the listed vectors, row-major, verified by Freivalds.
    pub fn gram(&mut self, rows: &[usize]) -> Step<Vec<i128>> {
        let n = rows.len();
        let d = self.values(rows[0]).len();
        self.counts.add(self.stage, freivalds_cost(n, d, n, self.reps));
        if self.proving() {
            let mut g = vec![0i128; n * n];
            for i in 0..n {
                for j in i..n {
                    let v = self
                        .integer_dot(rows[i], rows[j])
                        .ok_or_else(|| Fault::Prover("gram entry overflow".into()))?;
                    g[i * n + j] = v;
                    g[j * n + i] = v;
                }
            }
            self.range(None, "freivalds", &g)?;
            self.push(Gadget::Freivalds {
                rows: rows.to_vec(),
                gram: g.iter().map(|&v| v as i64).collect(),
            });
            return Ok(g);
        }
        let (idx, g) = self.next("freivalds")?;
        let Gadget::Freivalds { rows: rr, gram } = g else { unreachable!() };
        self.wiring(idx, "freivalds", rr == rows && gram.len() == n * n)?;
        let g: Vec<i128> = gram.iter().map(|&v| i128::from(v)).collect();
        self.range(Some(idx), "freivalds", &g)?;
        let mut m = Vec::with_capacity(n * d);
        let mut mt = vec![Fp::<P>::zero(); d * n];
        for (i, &r) in rows.iter().enumerate() {
            for (k, &x) in self.values(r).iter().enumerate() {
                let f = Fp::from_i64(x);
                m.push(f);
                mt[k * n + i] = f;
            }
        }
        let a = FieldMatrix::new(n, d, m).expect("shape");
        let b = FieldMatrix::new(d, n, mt).expect("shape");
        let c = FieldMatrix::from_i64(n, n, &gram).expect("shape");
        let reps = self.reps;
        let Mode::Replay { rng, .. } = &mut self.mode else { unreachable!() };
        let ok = freivalds_check(&a, &b, &c, reps, &mut **rng).expect("shapes agree");
        if !ok {
            return Err(self.reject(Some(idx), "freivalds", "A(Bv) != Cv"));
        }
        Ok(g)
    }

    /// m-Krum selection over the first `ids.len()` Gram rows. A claimed
    /// selection that differs from the exact fixed-point one is accepted only
    /// when every swapped pair is within the rounding slack of its scores.
    pub fn krum_select(
        &mut self,
        gram: &[i128],
        n_rows: usize,
        ids: &[usize],
        m: usize,
        f: usize,
        hint: Option<Vec<usize>>,
    ) -> Step<Vec<usize>> {
        let n = ids.len();
        let cost = self.cmp_cost() * (n * n.saturating_sub(1) / 2) as u64;
        self.counts.add(self.stage, cost);
        let d = self.vectors[0].values.len() as i128;
        let sqrt_d = isqrt(d) + 1;
        let k = krum_neighbor_count(n, f);
        let mut scores = Vec::with_capacity(n);
        let mut slack = Vec::with_capacity(n);
        for i in 0..n {
            let mut dist: Vec<i128> = (0..n)
                .filter(|&j| j != i)
                .map(|j| gram[i * n_rows + i] + gram[j * n_rows + j] - 2 * gram[i * n_rows + j])
                .collect();
            dist.sort_unstable();
            scores.push(dist[..k].iter().sum::<i128>());
            slack.push(dist[..k].iter().map(|&x| 2 * isqrt(x.max(0)) * sqrt_d + d).sum::<i128>());
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (scores[i], ids[i]));
        let mut exact: Vec<usize> = order[..m.min(n)].iter().map(|&i| ids[i]).collect();
        exact.sort_unstable();

        let (idx, claimed) = if self.proving() {
            let claimed = hint.unwrap_or_else(|| exact.clone());
            self.push(Gadget::KrumSelection {
                m,
                f,
                selected: claimed.clone(),
            });
            (None, claimed)
        } else {
            let (idx, g) = self.next("krum_selection")?;
            let Gadget::KrumSelection { m: rm, f: rf, selected } = g else {
                unreachable!()
            };
            self.wiring(idx, "krum_selection", rm == m && rf == f)?;
            (Some(idx), selected)
        };
        if claimed != exact {
            let pos = |id: &usize| ids.iter().position(|x| x == id);
            let valid = claimed.len() == m && claimed.windows(2).all(|w| w[0] < w[1]) && claimed.iter().all(|id| pos(id).is_some());
            let within = valid
                && claimed.iter().filter_map(pos).all(|c| {
                    (0..n)
                        .filter(|x| !claimed.contains(&ids[*x]))
                        .all(|x| scores[c] <= scores[x] || scores[c] - scores[x] <= slack[c] + slack[x])
                });
            if !within {
                let reason = format!("selection {claimed:?} differs from {exact:?} beyond rounding slack");
                return Err(match idx {
                    None => Fault::Prover(reason),
                    Some(i) => self.reject(Some(i), "krum_selection", reason),
                });
            }
            self.marginal = true;
        }
        Ok(claimed)
    }

    /// Checks `|Σ wᵢ·memberᵢ - W·output| ≤ W + 1` coordinatewise.
    pub fn aggregation(&mut self, members: &[(usize, u64)], output: usize) -> Step<()> {
        let d = self.values(output).len() as u64;
        let weighted = members.iter().filter(|(_, w)| *w != 1).count() as u64;
        self.counts.add(self.stage, d * (1 + weighted));
        let idx = if self.proving() {
            self.push(Gadget::Aggregation {
                members: members.to_vec(),
                output,
            });
            None
        } else {
            let (idx, g) = self.next("aggregation")?;
            let Gadget::Aggregation { members: rm, output: ro } = g else {
                unreachable!()
            };
            self.wiring(idx, "aggregation", rm == members && ro == output)?;
            Some(idx)
        };
        let total: i128 = members.iter().map(|&(_, w)| i128::from(w)).sum();
        if total == 0 {
            return Err(self.fail("aggregation", "no members"));
        }
        let out = self.values(output);
        for (k, &o) in out.iter().enumerate() {
            let sum: i128 = members.iter().map(|&(v, w)| i128::from(w) * i128::from(self.values(v)[k])).sum();
            if (sum - total * i128::from(o)).abs() > total + 1 {
                let reason = format!("coordinate {k} is not the mean of the members");
                return Err(match idx {
                    None => Fault::Prover(reason),
                    Some(i) => self.reject(Some(i), "aggregation", reason),
                });
            }
        }
        Ok(())
    }
}

/// Public inputs the program needs besides the vectors.
pub(crate) struct Program<'r> {
    pub round: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub gamma_raw: i128,
    pub lambda_raw: i128,
    pub weights: &'r BTreeMap<usize, u64>,
    pub report: &'r DetectionReport,
}

fn tolerance_check(ok: bool, what: &str, got: f64, claimed: f64) -> Step<()> {
    if ok {
        Ok(())
    } else {
        Err(Fault::Reject {
            index: None,
            kind: "report".into(),
            reason: format!("{what}: fixed point gives {got}, report claims {claimed}"),
        })
    }
}

/// Runs the full detection circuit. In replay mode any mismatch with the
/// claimed report is a rejection; in prove mode it is a prover fault.
pub(crate) fn run<const P: u64>(c: &mut Circuit<'_, P>, layout: &Layout, prog: &Program<'_>, hints: Hints) -> Step<()> {
    let report = prog.report;
    let one = c.one();
    let to_real = |v: i128| v as f64 / one as f64;
    let ulp = 1.0 / one as f64;
    let ids = layout.ids();
    let n = ids.len();
    let d = layout.dim as f64;
    let structure = |c: &Circuit<'_, P>, reason: &str| c.fail("structure", reason);

    if report.round != prog.round {
        return Err(c.fail("report", format!("report is for round {}", report.round)));
    }
    if n < 2 {
        return Err(structure(c, "need at least two client updates"));
    }

    // stage 1: cosine screening against the cached references
    c.set_stage(Stage::CrossRound);
    let mut flag = prog.round == 0;
    if prog.round > 0 {
        let g = layout.prev_global.ok_or_else(|| structure(c, "missing previous global segment"))?;
        let score_keys: Vec<usize> = report.cross_round_scores.keys().copied().collect();
        if score_keys != ids {
            return Err(c.fail("report", "cross-round scores do not cover exactly the submitting clients"));
        }
        let gg = c.dot(g, g)?;
        let ng = c.isqrt(gg)?;
        for &(id, u) in &layout.updates {
            let claimed = report.cross_round_scores[&id];
            let ug = c.dot(u, g)?;
            let uu = c.dot(u, u)?;
            let nu = c.isqrt(uu)?;
            let cos = cosine(c, ug, nu, ng)?;
            check_cosine(cos, nu, ng, claimed.sim_to_prev_global, d, ulp, to_real)?;
            let hint = claimed.sim_to_prev_global < prog.gamma;
            let less = c.less(cos, prog.gamma_raw, Purpose::CosineGlobal(id), Some(hint))?;
            if less != hint {
                return Err(c.fail(
                    "report",
                    format!("client {id}: global similarity decision disagrees with the report"),
                ));
            }
            flag |= less;
            match (layout.prev_client.get(&id), claimed.sim_to_prev_self) {
                (Some(&prev), Some(sim)) => {
                    let uc = c.dot(u, prev)?;
                    let cc = c.dot(prev, prev)?;
                    let nc = c.isqrt(cc)?;
                    let cos = cosine(c, uc, nu, nc)?;
                    check_cosine(cos, nu, nc, sim, d, ulp, to_real)?;
                    let hint = sim < prog.gamma;
                    let less = c.less(cos, prog.gamma_raw, Purpose::CosineSelf(id), Some(hint))?;
                    if less != hint {
                        return Err(c.fail("report", format!("client {id}: self similarity decision disagrees with the report")));
                    }
                    flag |= less;
                }
                (None, None) => {}
                _ => return Err(c.fail("report", format!("client {id}: self similarity present without cached history"))),
            }
        }
    }
    if flag != report.attack_flag {
        return Err(c.fail(
            "report",
            format!("attack flag is {} but stage one evaluates to {flag}", report.attack_flag),
        ));
    }

    // stage 2: evaluated every round, as a circuit would; only binding when
    // stage 1 raised the flag
    c.set_stage(Stage::CrossClient);
    let use_avg = prog.round > 0 && layout.prev_avg.is_some();
    let reference = if use_avg { layout.prev_avg } else { layout.reference };
    let a = reference.ok_or_else(|| structure(c, "missing reference vector"))?;
    if use_avg && layout.reference.is_some() {
        return Err(structure(c, "round-zero reference present although w_avg is cached"));
    }
    let mut rows: Vec<usize> = layout.updates.iter().map(|&(_, v)| v).collect();
    rows.push(a);
    let nr = rows.len();
    let gram = c.gram(&rows)?;
    if !use_avg {
        let members: Vec<usize> = if n >= 3 {
            let half = n / 2;
            c.krum_select(&gram, nr, &ids, half.max(1), half, hints.krum_selected)?
        } else {
            ids.clone()
        };
        let pairs: Vec<(usize, u64)> = layout
            .updates
            .iter()
            .filter(|(id, _)| members.contains(id))
            .map(|&(_, v)| (v, 1))
            .collect();
        c.aggregation(&pairs, a)?;
    }
    let ai = nr - 1;
    let mut ell = Vec::with_capacity(n);
    for i in 0..n {
        let sq = gram[i * nr + i] - 2 * gram[i * nr + ai] + gram[ai * nr + ai];
        ell.push(c.isqrt(sq)?);
    }
    let mu = c.div(ell.iter().sum(), n as i128)?;
    let mut ss = 0i128;
    for &l in &ell {
        ss += c.product(l - mu, l - mu)?;
    }
    let var = c.div(ss, n as i128 - 1)?;
    let sigma = c.isqrt(var)?;
    let scaled = c.product(prog.lambda_raw, sigma)?;
    let lam_sigma = c.div(scaled, one)?;
    let bound = mu + lam_sigma;
    let mut removed = BTreeSet::new();
    for (i, &id) in ids.iter().enumerate() {
        let hint = report.attack_flag.then(|| report.removed.contains(&id));
        if c.less(bound, ell[i], Purpose::Removal(id), hint)? {
            removed.insert(id);
        }
    }

    if report.attack_flag {
        if removed != report.removed {
            return Err(c.fail(
                "report",
                format!("removed set {:?} but the circuit removes {removed:?}", report.removed),
            ));
        }
        let keys: Vec<usize> = report.evilness.keys().copied().collect();
        if keys != ids {
            return Err(c.fail("report", "evilness scores do not cover exactly the submitting clients"));
        }
        let stats = report.stats.ok_or_else(|| c.fail("report", "missing statistics"))?;
        let claimed_bound = report.bound.ok_or_else(|| c.fail("report", "missing bound"))?;
        let tol_l = (d.sqrt() + 2.0) * ulp * 2.0;
        let rel = |x: f64| 1e-9 * x.abs();
        for (i, id) in ids.iter().enumerate() {
            let e = report.evilness[id];
            let got = to_real(ell[i]);
            tolerance_check((got - e).abs() <= tol_l + rel(e), "evilness", got, e)?;
            if (e > claimed_bound) != report.removed.contains(id) {
                return Err(c.fail("report", format!("client {id}: removal does not follow from the claimed bound")));
            }
        }
        tolerance_check(
            (to_real(mu) - stats.mean).abs() <= tol_l + rel(stats.mean),
            "mean",
            to_real(mu),
            stats.mean,
        )?;
        let tol_sigma = 4.0 * tol_l + 4.0 * ulp + (8.0 * ulp).sqrt();
        tolerance_check(
            (to_real(sigma) - stats.std_dev).abs() <= tol_sigma + rel(stats.std_dev),
            "std_dev",
            to_real(sigma),
            stats.std_dev,
        )?;
        let tol_bound = tol_l + prog.lambda * tol_sigma + 4.0 * ulp;
        tolerance_check(
            (to_real(bound) - claimed_bound).abs() <= tol_bound + rel(claimed_bound),
            "bound",
            to_real(bound),
            claimed_bound,
        )?;
        if stats.count != n {
            return Err(c.fail("report", "statistics count differs from the cohort size"));
        }
    } else if !report.removed.is_empty() || report.stats.is_some() {
        return Err(c.fail("report", "stage-two results claimed for a round stage one cleared"));
    }

    // aggregation of the survivors into the new global segment
    c.set_stage(Stage::Aggregation);
    let survivors: Vec<usize> = ids.iter().copied().filter(|id| !report.removed.contains(id)).collect();
    let weighted: Vec<usize> = prog.weights.keys().copied().collect();
    let expected: &[usize] = if layout.output.is_some() { &survivors } else { &[] };
    if weighted != expected || prog.weights.values().any(|&w| w == 0) {
        return Err(structure(c, "aggregation weights must be positive and cover exactly the survivors"));
    }
    match (layout.output, survivors.is_empty()) {
        (Some(out), false) => {
            let mut members = Vec::with_capacity(survivors.len());
            for &(id, v) in &layout.updates {
                if survivors.contains(&id) {
                    members.push((v, prog.weights[&id]));
                }
            }
            c.aggregation(&members, out)?;
        }
        (None, true) => {}
        (Some(_), true) => return Err(structure(c, "output committed although every update was removed")),
        (None, false) => return Err(structure(c, "missing output segment")),
    }
    Ok(())
}

/// `⌊dot / ⌊‖a‖‖b‖ / 2^s⌋⌋` at scale `s`; a zero norm product scores -1.
fn cosine<const P: u64>(c: &mut Circuit<'_, P>, dot: i128, na: i128, nb: i128) -> Step<i128> {
    let p = c.product(na, nb)?;
    let ps = c.div(p, c.one())?;
    if ps == 0 {
        return Ok(-c.one());
    }
    c.div(dot, ps)
}

fn check_cosine(cos: i128, na: i128, nb: i128, claimed: f64, d: f64, ulp: f64, to_real: impl Fn(i128) -> f64) -> Step<()> {
    let min_norm = to_real(na.min(nb));
    if min_norm <= 16.0 * ulp {
        // too close to zero for a meaningful bound
        return Ok(());
    }
    let tol = 1e-3 + 4.0 * d.sqrt() * ulp / min_norm;
    let got = to_real(cos);
    tolerance_check((got - claimed).abs() <= tol, "cosine", got, claimed)
}
