//! Prover: certifies on the quantized model and emits the transcript.
//!
//! The traversal itself runs in floating point on the dequantized network
//! (identical to the committed one); every value that enters the transcript
//! is then recomputed exactly and self-checked, so a float/exact disagreement
//! surfaces as a prover error instead of a rejected proof.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use faircert_core::certifier::{FacetKey, FacetRecord};
use faircert_core::geometry::{polytope_from_code, reduce_poly_dim, representative_point};
use faircert_core::{geocert_lb, ActivationCode, CertifyOptions, ModelWeights, Outcome, SensitiveSpec, TightRow, TraversalTrace};
use log::debug;
use num_bigint::BigInt;
use num_traits::{Signed, Zero};
use rayon::prelude::*;

use crate::checks::{self, BoundaryInst, Ctx};
use crate::commitment::{CommitTree, Commitment, ProverState};
use crate::encoding::{FixedPointEncoding, QuantizedModel, QuantizedSpec};
use crate::error::{ProtocolError, Result};
use crate::exact::{
    argmax_big, box_distance_fixed, code_maps, epsilon_from_fixed, forward, squared_distance_fixed, CodeMaps, IntRow,
    RatPoint,
};
use crate::transcript::{
    region_key, FacetRef, PerturbationRecord, ProofTranscript, RepPoint, SubProof, TRANSCRIPT_VERSION,
};

const MAX_PERTURBATION_STEPS: u32 = 64;
/// Grids tried when rounding a representative point to a rational.
const SNAP_BITS: [u32; 3] = [32, 48, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
}

type RowKey = (usize, ActivationCode, usize);

#[derive(Default)]
struct Cache {
    maps: HashMap<ActivationCode, Arc<CodeMaps>>,
    rows: HashMap<RowKey, Arc<Vec<IntRow>>>,
}

pub struct Prover {
    qm: QuantizedModel,
    qspec: QuantizedSpec,
    enc: FixedPointEncoding,
    model: ModelWeights,
    spec: SensitiveSpec,
    opts: CertifyOptions,
    state: ProverState,
    tree: CommitTree,
    /// When false, a point missing from the committed table is an error.
    pub allow_on_demand: bool,
    cache: RwLock<Cache>,
    on_demand: Mutex<BTreeMap<String, RatPoint>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl Prover {
    pub fn new(
        w: &ModelWeights,
        spec: &SensitiveSpec,
        enc: FixedPointEncoding,
        state: ProverState,
        opts: CertifyOptions,
    ) -> Result<Prover> {
        spec.validate(w.n_inputs)?;
        let qm = QuantizedModel::from_model(w, &enc)?;
        let qspec = QuantizedSpec::from_spec(spec, &enc)?;
        enc.quantize(opts.box_bound)?;
        let tree = CommitTree::build(&qm, &qspec, &enc, &state)?;
        Ok(Prover {
            model: qm.to_model(&enc),
            spec: qspec.to_spec(&enc),
            qm,
            qspec,
            enc,
            opts,
            state,
            tree,
            allow_on_demand: true,
            cache: RwLock::default(),
            on_demand: Mutex::default(),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        })
    }

    pub fn commitment(&self) -> &Commitment {
        &self.tree.commitment
    }

    pub fn state(&self) -> &ProverState {
        &self.state
    }

    pub fn quantized_model(&self) -> &QuantizedModel {
        &self.qm
    }

    pub fn quantized_spec(&self) -> &QuantizedSpec {
        &self.qspec
    }

    pub fn cache_stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    /// Points computed since the commitment because the table lacked them.
    pub fn on_demand_points(&self) -> BTreeMap<String, RatPoint> {
        self.on_demand.lock().expect("table lock").clone()
    }

    /// Proves each query, folds every point it needed into the table and
    /// recommits. Returns the table size.
    pub fn warm_up(&mut self, queries: &[Vec<f64>]) -> Result<usize> {
        for q in queries {
            self.prove(q)?;
        }
        let extra = std::mem::take(&mut *self.on_demand.lock().expect("table lock"));
        self.state.rep_table.extend(extra);
        self.tree = CommitTree::build(&self.qm, &self.qspec, &self.enc, &self.state)?;
        Ok(self.state.rep_table.len())
    }

    fn ctx(&self, label: usize) -> Ctx<'_> {
        Ctx {
            qm: &self.qm,
            spec: &self.qspec,
            scale_bits: self.enc.scale_bits,
            label,
        }
    }

    fn count(&self, hit: bool) {
        let c = if hit { &self.hits } else { &self.misses };
        c.fetch_add(1, Ordering::Relaxed);
    }

    fn maps(&self, code: &ActivationCode) -> Arc<CodeMaps> {
        if let Some(m) = self.cache.read().expect("cache lock").maps.get(code) {
            self.count(true);
            return m.clone();
        }
        self.count(false);
        let m = Arc::new(code_maps(&self.qm, code, self.enc.scale_bits));
        self.cache.write().expect("cache lock").maps.entry(code.clone()).or_insert(m).clone()
    }

    fn rows(&self, ctx: &Ctx<'_>, s_index: usize, s: &[i64], code: &ActivationCode) -> Arc<Vec<IntRow>> {
        let key = (s_index, code.clone(), ctx.label);
        if let Some(r) = self.cache.read().expect("cache lock").rows.get(&key) {
            self.count(true);
            return r.clone();
        }
        self.count(false);
        let r = Arc::new(ctx.cell_rows(s, code));
        self.cache.write().expect("cache lock").rows.entry(key).or_insert(r).clone()
    }

    fn rep_point(&self, key: String, compute: impl FnOnce() -> Result<RatPoint>) -> Result<(RepPoint, bool)> {
        if let Some(p) = self.state.rep_table.get(&key) {
            let opening = self.tree.open_rep(&key);
            return Ok((RepPoint { key, point: p.clone(), opening }, true));
        }
        if !self.allow_on_demand {
            return Err(ProtocolError::Prover(format!("missing representative point {key}")));
        }
        if let Some(p) = self.on_demand.lock().expect("table lock").get(&key) {
            return Ok((RepPoint { key, point: p.clone(), opening: None }, false));
        }
        let p = compute()?;
        debug!("on-demand representative point {key}");
        self.on_demand.lock().expect("table lock").insert(key.clone(), p.clone());
        Ok((RepPoint { key, point: p, opening: None }, false))
    }

    fn has_tie(&self, xq: &[i64], domain: &[Vec<i64>]) -> bool {
        let sb = self.enc.scale_bits;
        if forward(&self.qm, &RatPoint::from_grid(xq, sb), sb).has_tie() {
            return true;
        }
        let ns = RatPoint::from_grid(&self.qspec.project_out(xq), sb);
        domain
            .iter()
            .any(|s| forward(&self.qm, &ns.merge(&self.qspec, s, sb), sb).has_tie())
    }

    pub fn prove(&self, x: &[f64]) -> Result<ProofTranscript> {
        self.model.check_input(x)?;
        let sb = self.enc.scale_bits;
        let domain = self.qspec.enumerate_domain();
        let mut xq = self.enc.quantize_point(x)?;

        let mut perturbation = None;
        if let Some(coordinate) = self.qspec.first_non_sensitive(self.qm.n_inputs) {
            let mut steps = 0;
            while self.has_tie(&xq, &domain) {
                if steps == MAX_PERTURBATION_STEPS {
                    return Err(ProtocolError::Prover("query stays on a region boundary".into()));
                }
                xq[coordinate] += 1;
                steps += 1;
            }
            if steps > 0 {
                perturbation = Some(PerturbationRecord { coordinate, steps });
            }
        }

        let fwd = forward(&self.qm, &RatPoint::from_grid(&xq, sb), sb);
        let label = argmax_big(&fwd.logits);
        let ctx = self.ctx(label);
        let x_ns_q = self.qspec.project_out(&xq);
        let x_ns_f: Vec<f64> = x_ns_q.iter().map(|v| self.enc.dequantize(*v)).collect();
        let domain_f = self.spec.enumerate_domain();

        let run = |s: &Vec<f64>| geocert_lb(&self.model, &self.spec, s, &x_ns_f, label, &self.opts);
        let traces: Vec<TraversalTrace> = if self.opts.threads > 1 && domain_f.len() > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.opts.threads)
                .build()
                .map_err(|e| ProtocolError::Prover(e.to_string()))?;
            pool.install(|| domain_f.par_iter().map(run).collect::<faircert_core::Result<_>>())?
        } else {
            domain_f.iter().map(run).collect::<faircert_core::Result<_>>()?
        };

        let box_q = self.enc.quantize(self.opts.box_bound)?;
        let mut subproofs = Vec::new();
        let mut values = Vec::new();
        let mut leakage = Vec::new();
        for (s_index, (s, trace)) in domain.iter().zip(&traces).enumerate() {
            let mut b = Branch {
                prover: self,
                ctx: &ctx,
                s_index,
                s,
                x_ns: &x_ns_q,
                trace,
                out: &mut subproofs,
                seen: HashSet::new(),
                pending: BTreeMap::new(),
            };
            let (e, pops) = b.emit(box_q)?;
            values.push(e);
            leakage.push(pops);
        }
        let min = values.iter().min().cloned().unwrap_or_else(BigInt::zero);
        subproofs.push(SubProof::Min { values, min: min.clone() });
        subproofs.push(SubProof::Inference { code: fwd.code(), label });

        Ok(ProofTranscript {
            v: TRANSCRIPT_VERSION,
            commitment: self.commitment().clone(),
            opening: self.tree.open_model(&self.qm, &self.qspec),
            query: x.to_vec(),
            query_fixed: xq,
            perturbation,
            label,
            epsilon_lb: epsilon_from_fixed(&min, sb),
            epsilon_sq_fixed: min,
            box_bound_fixed: box_q,
            subproofs,
            leakage,
        })
    }

    /// Rational point inside region `code` of the slice, on a fine grid.
    fn region_point(&self, ctx: &Ctx<'_>, s: &[i64], code: &ActivationCode, near: &RatPoint, across: &IntRow) -> Result<RatPoint> {
        let sb = self.enc.scale_bits;
        let in_region = |p: &RatPoint| forward(&self.qm, &ctx.merged(p, s), sb).code() == *code;
        let s_f: Vec<f64> = s.iter().map(|v| self.enc.dequantize(*v)).collect();
        let center = polytope_from_code(&self.model, code)
            .and_then(|p| reduce_poly_dim(&p, &self.spec, &s_f))
            .and_then(|p| representative_point(&p, self.opts.box_bound));
        if let Ok(c) = center {
            for bits in SNAP_BITS {
                let p = RatPoint::from_f64(&c, bits);
                if in_region(&p) {
                    return Ok(p);
                }
            }
        }
        // Thin region: step off the shared facet into the neighbour.
        let (a, _) = across.to_f64();
        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let z = near.to_f64();
        for step in [1e-6, 1e-8, 1e-10] {
            let p: Vec<f64> = z.iter().zip(&a).map(|(zi, ai)| zi + step * ai / na).collect();
            let p = RatPoint::from_f64(&p, 64);
            if in_region(&p) {
                return Ok(p);
            }
        }
        Err(ProtocolError::Prover(format!("no exact representative point for region {code}")))
    }
}

/// Emission state for one sensitive assignment.
struct Branch<'p, 'a> {
    prover: &'p Prover,
    ctx: &'a Ctx<'p>,
    s_index: usize,
    s: &'a [i64],
    x_ns: &'a [i64],
    trace: &'a TraversalTrace,
    out: &'a mut Vec<SubProof>,
    seen: HashSet<FacetKey>,
    pending: BTreeMap<FacetRef, BigInt>,
}

impl Branch<'_, '_> {
    fn err(&self, msg: impl std::fmt::Display) -> ProtocolError {
        ProtocolError::Prover(format!("s#{}: {msg}", self.s_index))
    }

    fn emit(&mut self, box_q: i64) -> Result<(BigInt, usize)> {
        let ctx = *self.ctx;
        let sb = ctx.scale_bits;
        let x = ctx.grid_point(self.x_ns);
        let code = forward(ctx.qm, &ctx.merged(&x, self.s), sb).code();
        if code != self.trace.start_code {
            return Err(self.err("float and exact start regions differ"));
        }
        let rows = self.prover.rows(&ctx, self.s_index, self.s, &code);
        let h = ctx.n_hidden();
        let mismatch = (h..rows.len()).find(|&k| rows[k].slack_num(&x).is_negative());
        if mismatch.is_some() != (self.trace.outcome == Outcome::LabelMismatch) {
            return Err(self.err("float and exact label checks differ"));
        }
        let mismatch_class = mismatch.map(|k| match ctx.tight_at(k) {
            TightRow::Label(j) => j,
            TightRow::Neuron(_) => unreachable!("label rows follow neuron rows"),
        });
        self.out.push(SubProof::Polytope {
            s_index: self.s_index,
            code: code.clone(),
            rows: rows.to_vec(),
            label_consistent: mismatch.is_none(),
            mismatch_class,
        });
        if mismatch.is_some() {
            return Ok((BigInt::zero(), 0));
        }

        self.distances(&code, &rows, None)?;
        let d_box = box_distance_fixed(self.x_ns, box_q, sb);
        let mut pops = 0;
        for (pi, pop) in self.trace.pops.iter().enumerate() {
            let rec = &self.trace.facets[pop.facet];
            let fref = FacetRef { owner: rec.owner.clone(), tight: rec.tight_row };
            let d = self
                .pending
                .remove(&fref)
                .ok_or_else(|| self.err(format!("popped facet {fref:?} is not pending")))?;
            if self.pending.values().any(|v| *v < d) || d > d_box {
                return Err(self.err("exact distances reorder the traversal"));
            }
            self.out.push(SubProof::Order { facet: Some(fref.clone()), sq_distance: d.clone() });
            pops += 1;

            let owner_rows = self.prover.rows(&ctx, self.s_index, self.s, &rec.owner);
            let maps = self.prover.maps(&rec.owner);
            let key = fref.table_key(self.s_index, ctx.label);
            let (point, precomputed) =
                self.prover.rep_point(key, || self.facet_point(rec, &owner_rows, &maps, pop.is_boundary))?;
            self.out.push(SubProof::Boundary {
                facet: fref.clone(),
                is_boundary: pop.is_boundary,
                point: point.clone(),
                linear_map: maps.output.clone(),
                precomputed,
            });
            if pop.is_boundary {
                return Ok((d, pops));
            }

            let TightRow::Neuron(i) = rec.tight_row else {
                return Err(self.err("non-boundary pop on a label row"));
            };
            let next = rec.owner.flipped(i);
            let next_rows = self.prover.rows(&ctx, self.s_index, self.s, &next);
            let (npoint, nprecomputed) = self.prover.rep_point(region_key(self.s_index, &next), || {
                self.prover.region_point(&ctx, self.s, &next, &point.point, &owner_rows[i])
            })?;
            self.out.push(SubProof::Neighbor {
                via: fref,
                code: next.clone(),
                point: npoint,
                rows: next_rows.to_vec(),
                precomputed: nprecomputed,
            });
            if pop.neighbor.is_some() {
                self.distances(&next, &next_rows, Some(pi))?;
            }
        }
        if self.trace.outcome != Outcome::BoxLimited {
            return Err(self.err("traversal ended without a boundary"));
        }
        if self.pending.values().any(|v| *v < d_box) {
            return Err(self.err("exact distances reorder the box stop"));
        }
        self.out.push(SubProof::Order { facet: None, sq_distance: d_box.clone() });
        Ok((d_box, pops))
    }

    /// One `Distance` per unseen nonzero row of the cell, in row order.
    fn distances(&mut self, code: &ActivationCode, rows: &[IntRow], pushed_by: Option<usize>) -> Result<()> {
        let solid: HashMap<TightRow, &FacetRecord> = self
            .trace
            .facets
            .iter()
            .filter(|f| f.pushed_by == pushed_by && f.owner == *code)
            .map(|f| (f.tight_row, f))
            .collect();
        let mut emitted = 0;
        for (k, row) in rows.iter().enumerate() {
            if row.a.iter().all(Zero::is_zero) {
                continue;
            }
            let tight = self.ctx.tight_at(k);
            if !self.seen.insert(FacetKey::of(code, tight)) {
                continue;
            }
            let d = squared_distance_fixed(row, self.x_ns, self.ctx.scale_bits).expect("nonzero normal");
            let is_solid = solid.contains_key(&tight);
            let facet = FacetRef { owner: code.clone(), tight };
            if is_solid {
                emitted += 1;
                self.pending.insert(facet.clone(), d.clone());
            }
            self.out.push(SubProof::Distance { facet, row: row.clone(), sq_distance: d, solid: is_solid });
        }
        if emitted != solid.len() {
            return Err(self.err(format!("cell {code}: float and exact facet lists differ")));
        }
        Ok(())
    }

    fn facet_point(&self, rec: &FacetRecord, owner_rows: &[IntRow], maps: &CodeMaps, expect: bool) -> Result<RatPoint> {
        let ctx = self.ctx;
        let k = ctx.row_index(rec.tight_row).expect("tight row of the cell");
        for bits in SNAP_BITS {
            let Some(z) = RatPoint::from_f64(&rec.representative, bits).snap_to_hyperplane(&owner_rows[k]) else {
                continue;
            };
            let inst = BoundaryInst {
                s: self.s,
                owner: &rec.owner,
                owner_rows,
                tight: rec.tight_row,
                z: &z,
                map: &maps.output,
                expect,
            };
            if checks::boundary(ctx, &inst) {
                return Ok(z);
            }
        }
        Err(self.err(format!("no exact representative point for facet {}/{:?}", rec.owner, rec.tight_row)))
    }
}
