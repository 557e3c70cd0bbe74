//! The seven checks as pure predicates over exact integers.
//!
//! Each instance carries what the verifier has already established (rows of
//! validated cells, pending distances) next to what the sub-proof claims. A
//! backend decides whether the claim holds; [`Replay`] does it directly.

use faircert_core::{ActivationCode, TightRow};
use num_bigint::BigInt;
use num_traits::{Signed, Zero};

use crate::encoding::{QuantizedModel, QuantizedSpec};
use crate::exact::{argmax_big, code_maps, forward, slice_row, squared_distance_fixed, IntAffine, IntRow, RatPoint};
use crate::transcript::CheckKind;

/// Public data shared by every check of one transcript.
#[derive(Debug, Clone, Copy)]
pub struct Ctx<'a> {
    pub qm: &'a QuantizedModel,
    pub spec: &'a QuantizedSpec,
    pub scale_bits: u32,
    /// Label being certified.
    pub label: usize,
}

impl Ctx<'_> {
    pub fn n_hidden(&self) -> usize {
        self.qm.n_hidden()
    }

    /// Position of a tight row within a cell's row list.
    pub fn row_index(&self, tight: TightRow) -> Option<usize> {
        let h = self.n_hidden();
        match tight {
            TightRow::Neuron(i) => (i < h).then_some(i),
            TightRow::Label(j) if j == self.label || j >= self.qm.n_classes => None,
            TightRow::Label(j) => Some(h + if j < self.label { j } else { j - 1 }),
        }
    }

    pub fn tight_at(&self, k: usize) -> TightRow {
        let h = self.n_hidden();
        if k < h {
            TightRow::Neuron(k)
        } else {
            let j = k - h;
            TightRow::Label(if j < self.label { j } else { j + 1 })
        }
    }

    /// Sliced rows of the cell `code` (neurons, then label rows).
    pub fn cell_rows(&self, s: &[i64], code: &ActivationCode) -> Vec<IntRow> {
        code_maps(self.qm, code, self.scale_bits)
            .cell_rows(code, self.label)
            .into_iter()
            .map(|(_, r)| slice_row(&r, self.spec, s, self.scale_bits))
            .collect()
    }

    pub fn grid_point(&self, q: &[i64]) -> RatPoint {
        RatPoint::from_grid(q, self.scale_bits)
    }

    pub fn merged(&self, z: &RatPoint, s: &[i64]) -> RatPoint {
        z.merge(self.spec, s, self.scale_bits)
    }

    pub fn code_valid(&self, code: &ActivationCode) -> bool {
        code.len() == self.n_hidden()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PolytopeInst<'a> {
    pub s: &'a [i64],
    pub x_ns: &'a [i64],
    pub code: &'a ActivationCode,
    pub rows: &'a [IntRow],
    pub label_consistent: bool,
    pub mismatch_class: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct DistanceInst<'a> {
    pub x_ns: &'a [i64],
    pub established: &'a IntRow,
    pub row: &'a IntRow,
    pub sq_distance: &'a BigInt,
}

#[derive(Debug, Clone, Copy)]
pub struct NeighborInst<'a> {
    pub s: &'a [i64],
    pub owner: &'a ActivationCode,
    pub owner_rows: &'a [IntRow],
    /// Neuron whose hyperplane is crossed.
    pub neuron: usize,
    pub code: &'a ActivationCode,
    pub z: &'a RatPoint,
    pub rows: &'a [IntRow],
}

#[derive(Debug, Clone, Copy)]
pub struct BoundaryInst<'a> {
    pub s: &'a [i64],
    pub owner: &'a ActivationCode,
    pub owner_rows: &'a [IntRow],
    pub tight: TightRow,
    pub z: &'a RatPoint,
    pub map: &'a IntAffine,
    pub expect: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct OrderInst<'a> {
    pub claimed: &'a BigInt,
    /// The value on record for the popped facet (or the box distance).
    pub established: &'a BigInt,
    /// Everything still pending, the box distance included.
    pub others: &'a [BigInt],
}

#[derive(Debug, Clone, Copy)]
pub struct MinInst<'a> {
    pub established: &'a [BigInt],
    pub values: &'a [BigInt],
    pub min: &'a BigInt,
}

#[derive(Debug, Clone, Copy)]
pub struct InferenceInst<'a> {
    pub x: &'a [i64],
    pub code: &'a ActivationCode,
    pub label: usize,
}

#[derive(Debug, Clone, Copy)]
pub enum CheckInstance<'a> {
    Polytope(PolytopeInst<'a>),
    Distance(DistanceInst<'a>),
    Neighbor(NeighborInst<'a>),
    Boundary(BoundaryInst<'a>),
    Order(OrderInst<'a>),
    Min(MinInst<'a>),
    Inference(InferenceInst<'a>),
}

impl CheckInstance<'_> {
    pub fn kind(&self) -> CheckKind {
        match self {
            CheckInstance::Polytope(_) => CheckKind::Polytope,
            CheckInstance::Distance(_) => CheckKind::Distance,
            CheckInstance::Neighbor(_) => CheckKind::Neighbor,
            CheckInstance::Boundary(_) => CheckKind::Boundary,
            CheckInstance::Order(_) => CheckKind::Order,
            CheckInstance::Min(_) => CheckKind::Min,
            CheckInstance::Inference(_) => CheckKind::Inference,
        }
    }
}

pub trait CheckBackend {
    fn name(&self) -> &'static str;
    fn check(&mut self, ctx: &Ctx<'_>, inst: &CheckInstance<'_>) -> bool;
}

/// Recomputes every claim in exact integer arithmetic.
#[derive(Debug, Default, Clone, Copy)]
pub struct Replay;

impl CheckBackend for Replay {
    fn name(&self) -> &'static str {
        "replay"
    }

    fn check(&mut self, ctx: &Ctx<'_>, inst: &CheckInstance<'_>) -> bool {
        match inst {
            CheckInstance::Polytope(i) => polytope(ctx, i),
            CheckInstance::Distance(i) => distance(ctx, i),
            CheckInstance::Neighbor(i) => neighbor(ctx, i),
            CheckInstance::Boundary(i) => boundary(ctx, i),
            CheckInstance::Order(i) => order(i),
            CheckInstance::Min(i) => min(i),
            CheckInstance::Inference(i) => inference(ctx, i),
        }
    }
}

pub fn polytope(ctx: &Ctx<'_>, i: &PolytopeInst<'_>) -> bool {
    if !ctx.code_valid(i.code) {
        return false;
    }
    let x = ctx.grid_point(i.x_ns);
    if forward(ctx.qm, &ctx.merged(&x, i.s), ctx.scale_bits).code() != *i.code {
        return false;
    }
    if ctx.cell_rows(i.s, i.code) != i.rows {
        return false;
    }
    let h = ctx.n_hidden();
    let violated = i.rows[h..].iter().any(|r| r.slack_num(&x).is_negative());
    match (i.label_consistent, i.mismatch_class) {
        (true, None) => !violated,
        (false, Some(j)) => ctx
            .row_index(TightRow::Label(j))
            .is_some_and(|k| i.rows[k].slack_num(&x).is_negative()),
        _ => false,
    }
}

pub fn distance(ctx: &Ctx<'_>, i: &DistanceInst<'_>) -> bool {
    i.row == i.established
        && squared_distance_fixed(i.row, i.x_ns, ctx.scale_bits).as_ref() == Some(i.sq_distance)
}

pub fn neighbor(ctx: &Ctx<'_>, i: &NeighborInst<'_>) -> bool {
    let h = ctx.n_hidden();
    if i.neuron >= h || !ctx.code_valid(i.code) || i.owner.hamming(i.code) != 1 || i.owner.get(i.neuron) == i.code.get(i.neuron)
    {
        return false;
    }
    if i.z.dim() + ctx.spec.k() != ctx.qm.n_inputs || !i.z.den.is_positive() {
        return false;
    }
    if forward(ctx.qm, &ctx.merged(i.z, i.s), ctx.scale_bits).code() != *i.code {
        return false;
    }
    ctx.cell_rows(i.s, i.code) == i.rows && i.rows[i.neuron] == i.owner_rows[i.neuron].negated()
}

/// Logit numerators of the owner's map at the full point `(z, s)`.
pub fn logits_at(map: &IntAffine, full: &RatPoint) -> Vec<BigInt> {
    map.m
        .iter()
        .zip(&map.c)
        .map(|(m, c)| crate::exact::dot(m, &full.num) + c * &full.den)
        .collect()
}

pub fn boundary(ctx: &Ctx<'_>, i: &BoundaryInst<'_>) -> bool {
    let Some(k) = ctx.row_index(i.tight) else {
        return false;
    };
    if i.z.dim() + ctx.spec.k() != ctx.qm.n_inputs || !i.z.den.is_positive() {
        return false;
    }
    if *i.map != code_maps(ctx.qm, i.owner, ctx.scale_bits).output {
        return false;
    }
    for (r, row) in i.owner_rows.iter().enumerate() {
        let slack = row.slack_num(i.z);
        if (r == k && !slack.is_zero()) || slack.is_negative() {
            return false;
        }
    }
    let logits = logits_at(i.map, &ctx.merged(i.z, i.s));
    let y = ctx.label;
    match (i.expect, i.tight) {
        (true, TightRow::Label(j)) => logits[j] == logits[y] && logits.iter().all(|v| *v <= logits[y]),
        (false, TightRow::Neuron(_)) => logits.iter().enumerate().all(|(c, v)| c == y || *v < logits[y]),
        _ => false,
    }
}

pub fn order(i: &OrderInst<'_>) -> bool {
    i.claimed == i.established && i.others.iter().all(|v| i.claimed <= v)
}

pub fn min(i: &MinInst<'_>) -> bool {
    i.values == i.established && !i.values.is_empty() && i.values.iter().all(|v| i.min <= v) && i.values.contains(i.min)
}

pub fn inference(ctx: &Ctx<'_>, i: &InferenceInst<'_>) -> bool {
    if i.x.len() != ctx.qm.n_inputs {
        return false;
    }
    let f = forward(ctx.qm, &ctx.grid_point(i.x), ctx.scale_bits);
    f.code() == *i.code && i.label == argmax_big(&f.logits) && i.label == ctx.label
}
