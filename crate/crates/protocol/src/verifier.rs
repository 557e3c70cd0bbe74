//! Verifier: replays a transcript in order against the commitment.
//!
//! The driver owns all bookkeeping (validated cells, seen facets, the
//! pending distance set standing in for the priority queue) and hands each
//! claim to a [`CheckBackend`]. Structural surprises reject with the kind of
//! sub-proof the replay expected at that position.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use faircert_core::certifier::FacetKey;
use faircert_core::{ActivationCode, TightRow};
use num_bigint::BigInt;
use num_traits::Zero;
use serde::Serialize;

use crate::checks::{
    BoundaryInst, CheckBackend, CheckInstance, Ctx, DistanceInst, InferenceInst, MinInst, NeighborInst, OrderInst,
    PolytopeInst, Replay,
};
use crate::commitment::{rep_payload, Commitment};
use crate::encoding::{QuantizedModel, QuantizedSpec};
use crate::exact::{box_distance_fixed, epsilon_from_fixed, forward, IntRow, RatPoint};
use crate::transcript::{region_key, CheckKind, FacetRef, ProofTranscript, RepPoint, SubProof, TRANSCRIPT_VERSION};

const MAX_PERTURBATION_STEPS: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RejectKind {
    Check(CheckKind),
    /// An authentication path or the commitment itself does not match.
    Opening,
    /// The claimed `(x, y, epsilon)` disagrees with the transcript.
    Claim,
    Malformed,
}

impl fmt::Display for RejectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectKind::Check(k) => write!(f, "{k}"),
            RejectKind::Opening => f.write_str("Opening"),
            RejectKind::Claim => f.write_str("Claim"),
            RejectKind::Malformed => f.write_str("Malformed"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    pub kind: RejectKind,
    /// Position in `subproofs`, when the failure is tied to one.
    pub index: Option<usize>,
    pub detail: String,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "{} at subproof {i}: {}", self.kind, self.detail),
            None => write!(f, "{}: {}", self.kind, self.detail),
        }
    }
}

impl std::error::Error for Rejection {}

pub type Verdict = Result<(), Rejection>;

fn reject(kind: RejectKind, index: Option<usize>, detail: impl Into<String>) -> Rejection {
    Rejection { kind, index, detail: detail.into() }
}

fn check_reject(kind: CheckKind, index: Option<usize>, detail: impl Into<String>) -> Rejection {
    reject(RejectKind::Check(kind), index, detail)
}

/// Verifies with the exact replay backend.
pub fn verify_certificate(c: &Commitment, x: &[f64], y: usize, epsilon: f64, t: &ProofTranscript) -> Verdict {
    verify_with(&mut Replay, c, x, y, epsilon, t)
}

pub fn verify_with(
    backend: &mut dyn CheckBackend,
    c: &Commitment,
    x: &[f64],
    y: usize,
    epsilon: f64,
    t: &ProofTranscript,
) -> Verdict {
    if t.v != TRANSCRIPT_VERSION {
        return Err(reject(RejectKind::Malformed, None, format!("transcript version {}", t.v)));
    }
    if t.commitment != *c {
        return Err(reject(RejectKind::Opening, None, "transcript is bound to a different commitment"));
    }
    if let Some(i) = t.opening.first_failure(c) {
        return Err(reject(RejectKind::Opening, None, format!("model leaf {i} does not authenticate")));
    }
    let qm = &t.opening.model;
    let spec = &t.opening.spec;
    if let Err(e) = well_formed(qm, spec) {
        return Err(reject(RejectKind::Malformed, None, e));
    }
    let sb = c.encoding.scale_bits;
    let xq = check_query(qm, spec, c, x, t)?;
    if y != t.label || epsilon.to_bits() != t.epsilon_lb.to_bits() {
        return Err(reject(
            RejectKind::Claim,
            None,
            format!("claimed (y={y}, eps={epsilon}) but transcript has (y={}, eps={})", t.label, t.epsilon_lb),
        ));
    }
    if t.label >= qm.n_classes || t.box_bound_fixed <= 0 {
        return Err(reject(RejectKind::Malformed, None, "label or box bound out of range"));
    }
    let ctx = Ctx { qm, spec, scale_bits: sb, label: t.label };
    let mut d = Driver {
        backend,
        ctx,
        c,
        t,
        pos: 0,
        x_ns: spec.project_out(&xq),
    };
    d.run(&xq)
}

fn well_formed(qm: &QuantizedModel, spec: &QuantizedSpec) -> Result<(), String> {
    if qm.layers.len() < 2 || qm.n_inputs == 0 || qm.n_classes < 2 {
        return Err("model needs a hidden layer, inputs and two classes".into());
    }
    let mut width = qm.n_inputs;
    for (l, layer) in qm.layers.iter().enumerate() {
        if layer.bias.is_empty() || layer.weights.len() != layer.bias.len() || layer.weights.iter().any(|r| r.len() != width)
        {
            return Err(format!("layer {l} has inconsistent shape"));
        }
        width = layer.bias.len();
    }
    if width != qm.n_classes {
        return Err("output width differs from n_classes".into());
    }
    let mut idx = HashSet::new();
    for f in &spec.features {
        if f.index >= qm.n_inputs || !idx.insert(f.index) || f.domain.is_empty() {
            return Err(format!("sensitive feature {} is invalid", f.index));
        }
    }
    if spec.k() >= qm.n_inputs {
        return Err("no non-sensitive coordinates".into());
    }
    Ok(())
}

/// The grid point the transcript certifies, after checking it against `x`.
fn check_query(
    qm: &QuantizedModel,
    spec: &QuantizedSpec,
    c: &Commitment,
    x: &[f64],
    t: &ProofTranscript,
) -> Result<Vec<i64>, Rejection> {
    let claim = |d: &str| reject(RejectKind::Claim, None, d.to_string());
    if x.len() != qm.n_inputs {
        return Err(claim("query dimension differs from the model"));
    }
    if t.query.len() != x.len() || t.query.iter().zip(x).any(|(a, b)| a.to_bits() != b.to_bits()) {
        return Err(claim("transcript certifies a different query"));
    }
    let mut xq = c.encoding.quantize_point(x).map_err(|e| claim(&e.to_string()))?;
    if let Some(p) = &t.perturbation {
        let sb = c.encoding.scale_bits;
        if Some(p.coordinate) != spec.first_non_sensitive(qm.n_inputs) || p.steps == 0 || p.steps > MAX_PERTURBATION_STEPS {
            return Err(claim("perturbation record is invalid"));
        }
        let domain = spec.enumerate_domain();
        for _ in 0..p.steps {
            let tie = forward(qm, &RatPoint::from_grid(&xq, sb), sb).has_tie() || {
                let ns = RatPoint::from_grid(&spec.project_out(&xq), sb);
                domain.iter().any(|s| forward(qm, &ns.merge(spec, s, sb), sb).has_tie())
            };
            if !tie {
                return Err(claim("perturbation applied to a query that was not on a region boundary"));
            }
            xq[p.coordinate] += 1;
        }
    }
    if xq != t.query_fixed {
        return Err(claim("certified grid point differs from the quantized query"));
    }
    Ok(xq)
}

struct Driver<'a, 'b> {
    backend: &'b mut dyn CheckBackend,
    ctx: Ctx<'a>,
    c: &'a Commitment,
    t: &'a ProofTranscript,
    pos: usize,
    x_ns: Vec<i64>,
}

/// Bookkeeping for one sensitive assignment.
#[derive(Default)]
struct BranchState {
    cells: HashMap<ActivationCode, Vec<IntRow>>,
    seen: HashSet<FacetKey>,
    pending: BTreeMap<FacetRef, BigInt>,
}

impl<'a> Driver<'a, '_> {
    fn next(&mut self, expect: CheckKind) -> Result<(usize, &'a SubProof), Rejection> {
        let i = self.pos;
        let p = self
            .t
            .subproofs
            .get(i)
            .ok_or_else(|| check_reject(expect, None, format!("transcript ends where a {expect} was expected")))?;
        if p.kind() != expect {
            return Err(check_reject(expect, Some(i), format!("expected {expect}, found {}", p.kind())));
        }
        self.pos += 1;
        Ok((i, p))
    }

    fn check(&mut self, index: usize, inst: CheckInstance<'_>) -> Verdict {
        let kind = inst.kind();
        if self.backend.check(&self.ctx, &inst) {
            Ok(())
        } else {
            Err(check_reject(kind, Some(index), format!("{} check failed", self.backend.name())))
        }
    }

    fn authenticate(&self, index: usize, p: &RepPoint, key: &str, precomputed: bool) -> Verdict {
        if p.key != key {
            return Err(reject(RejectKind::Opening, Some(index), format!("point opened under key {}", p.key)));
        }
        match &p.opening {
            Some(o) if precomputed => {
                if o.verify(self.c, &rep_payload(key, &p.point)) {
                    Ok(())
                } else {
                    Err(reject(RejectKind::Opening, Some(index), format!("point {key} does not authenticate")))
                }
            }
            None if !precomputed => Ok(()),
            _ => Err(reject(RejectKind::Opening, Some(index), "precomputed flag disagrees with the opening")),
        }
    }

    fn run(&mut self, xq: &[i64]) -> Verdict {
        let spec = self.ctx.spec;
        let sb = self.ctx.scale_bits;
        let d_box = box_distance_fixed(&self.x_ns, self.t.box_bound_fixed, sb);
        let mut values = Vec::new();
        let mut leakage = Vec::new();
        for (s_index, s) in spec.enumerate_domain().iter().enumerate() {
            let (e, pops) = self.branch(s_index, s, &d_box)?;
            values.push(e);
            leakage.push(pops);
        }

        let (i, p) = self.next(CheckKind::Min)?;
        let SubProof::Min { values: claimed, min } = p else { unreachable!() };
        self.check(i, CheckInstance::Min(MinInst { established: &values, values: claimed, min }))?;
        if self.t.epsilon_sq_fixed != *min || epsilon_from_fixed(min, sb).to_bits() != self.t.epsilon_lb.to_bits() {
            return Err(check_reject(CheckKind::Min, Some(i), "epsilon does not follow from the minimum"));
        }

        let (i, p) = self.next(CheckKind::Inference)?;
        let SubProof::Inference { code, label } = p else { unreachable!() };
        self.check(i, CheckInstance::Inference(InferenceInst { x: xq, code, label: *label }))?;

        if self.pos != self.t.subproofs.len() {
            return Err(reject(RejectKind::Malformed, Some(self.pos), "trailing subproofs"));
        }
        if leakage != self.t.leakage {
            return Err(reject(RejectKind::Malformed, None, "leakage counters differ from the replayed pops"));
        }
        Ok(())
    }

    fn branch(&mut self, s_index: usize, s: &[i64], d_box: &BigInt) -> Result<(BigInt, usize), Rejection> {
        let (i, p) = self.next(CheckKind::Polytope)?;
        let SubProof::Polytope { s_index: si, code, rows, label_consistent, mismatch_class } = p else { unreachable!() };
        if *si != s_index {
            return Err(check_reject(CheckKind::Polytope, Some(i), format!("expected assignment {s_index}")));
        }
        let x_ns = self.x_ns.clone();
        self.check(
            i,
            CheckInstance::Polytope(PolytopeInst {
                s,
                x_ns: &x_ns,
                code,
                rows,
                label_consistent: *label_consistent,
                mismatch_class: *mismatch_class,
            }),
        )?;
        if !*label_consistent {
            return Ok((BigInt::zero(), 0));
        }

        let mut st = BranchState::default();
        st.cells.insert(code.clone(), rows.clone());
        self.distances(&mut st, code, rows)?;
        let mut pops = 0;
        loop {
            let (i, p) = self.next(CheckKind::Order)?;
            let SubProof::Order { facet, sq_distance } = p else { unreachable!() };
            let Some(f) = facet else {
                let others: Vec<BigInt> = st.pending.values().cloned().collect();
                self.check(i, CheckInstance::Order(OrderInst { claimed: sq_distance, established: d_box, others: &others }))?;
                return Ok((d_box.clone(), pops));
            };
            let Some(established) = st.pending.remove(f) else {
                return Err(check_reject(CheckKind::Order, Some(i), "popped facet is not pending"));
            };
            let mut others: Vec<BigInt> = st.pending.values().cloned().collect();
            others.push(d_box.clone());
            self.check(i, CheckInstance::Order(OrderInst { claimed: sq_distance, established: &established, others: &others }))?;
            pops += 1;

            let (i, p) = self.next(CheckKind::Boundary)?;
            let SubProof::Boundary { facet: bf, is_boundary, point, linear_map, precomputed } = p else { unreachable!() };
            if bf != f {
                return Err(check_reject(CheckKind::Boundary, Some(i), "facet differs from the popped one"));
            }
            self.authenticate(i, point, &f.table_key(s_index, self.ctx.label), *precomputed)?;
            let owner_rows = st.cells[&f.owner].clone();
            self.check(
                i,
                CheckInstance::Boundary(BoundaryInst {
                    s,
                    owner: &f.owner,
                    owner_rows: &owner_rows,
                    tight: f.tight,
                    z: &point.point,
                    map: linear_map,
                    expect: *is_boundary,
                }),
            )?;
            if *is_boundary {
                return Ok((sq_distance.clone(), pops));
            }
            let TightRow::Neuron(neuron) = f.tight else {
                return Err(check_reject(CheckKind::Boundary, Some(i), "a label facet is always a boundary"));
            };

            let (i, p) = self.next(CheckKind::Neighbor)?;
            let SubProof::Neighbor { via, code, point, rows, precomputed } = p else { unreachable!() };
            if via != f {
                return Err(check_reject(CheckKind::Neighbor, Some(i), "neighbor entered through another facet"));
            }
            self.authenticate(i, point, &region_key(s_index, code), *precomputed)?;
            self.check(
                i,
                CheckInstance::Neighbor(NeighborInst {
                    s,
                    owner: &f.owner,
                    owner_rows: &owner_rows,
                    neuron,
                    code,
                    z: &point.point,
                    rows,
                }),
            )?;
            if !st.cells.contains_key(code) {
                st.cells.insert(code.clone(), rows.clone());
                self.distances(&mut st, code, rows)?;
            }
        }
    }

    /// Expects one `Distance` per unseen facet of a new cell, in row order.
    fn distances(&mut self, st: &mut BranchState, code: &ActivationCode, rows: &[IntRow]) -> Verdict {
        for (k, row) in rows.iter().enumerate() {
            if row.a.iter().all(Zero::is_zero) {
                continue;
            }
            let tight = self.ctx.tight_at(k);
            if !st.seen.insert(FacetKey::of(code, tight)) {
                continue;
            }
            let want = FacetRef { owner: code.clone(), tight };
            let (i, p) = self.next(CheckKind::Distance)?;
            let SubProof::Distance { facet, row: claimed, sq_distance, solid } = p else { unreachable!() };
            if *facet != want {
                return Err(check_reject(CheckKind::Distance, Some(i), format!("expected a distance for {want:?}")));
            }
            let x_ns = self.x_ns.clone();
            self.check(
                i,
                CheckInstance::Distance(DistanceInst { x_ns: &x_ns, established: row, row: claimed, sq_distance }),
            )?;
            if *solid {
                st.pending.insert(want, sq_distance.clone());
            }
        }
        Ok(())
    }
}
