//! Constraint backend: lowers each check to rank-1 constraints over the BN254
//! scalar field and evaluates them on the witness the claim induces.
//!
//! Model weights, activation codes, claimed rows, maps, points and distances
//! are witnesses; the query, the certified label and values the verifier has
//! already established are constants. Products of two witnesses cost one
//! constraint; comparisons are bit decompositions. Range widths follow the
//! witness (`bits(|v|) + 1`, rounded up to a byte, at most [`MAX_RANGE_BITS`]),
//! which stays sound because every width is far below the field size: a
//! negative value would need ~254 bits to recompose.

use std::collections::BTreeMap;

use ark_bn254::Fr;
use ark_ff::{AdditiveGroup, BigInteger, Field, PrimeField};
use faircert_core::TightRow;
use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{One, Signed, Zero};

use crate::checks::{
    BoundaryInst, CheckBackend, CheckInstance, Ctx, DistanceInst, InferenceInst, MinInst, NeighborInst, OrderInst,
    PolytopeInst,
};
use crate::exact::{IntRow, RatPoint};
use crate::transcript::CheckKind;

pub const MAX_RANGE_BITS: usize = 250;

pub type Var = usize;

/// `sum coeff * var`; variable 0 is the constant one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lc(pub Vec<(Var, Fr)>);

impl Lc {
    pub fn zero() -> Lc {
        Lc(Vec::new())
    }

    pub fn constant(c: Fr) -> Lc {
        if c.is_zero() {
            Lc::zero()
        } else {
            Lc(vec![(0, c)])
        }
    }

    pub fn var(v: Var) -> Lc {
        Lc(vec![(v, Fr::ONE)])
    }

    fn is_constant(&self) -> bool {
        self.0.iter().all(|(v, _)| *v == 0)
    }

    fn constant_value(&self) -> Fr {
        self.0.iter().map(|(_, c)| *c).sum()
    }

    pub fn add(&self, o: &Lc) -> Lc {
        let mut t = self.0.clone();
        t.extend_from_slice(&o.0);
        Lc(t)
    }

    pub fn sub(&self, o: &Lc) -> Lc {
        self.add(&o.scale(-Fr::ONE))
    }

    pub fn scale(&self, k: Fr) -> Lc {
        if k.is_zero() {
            return Lc::zero();
        }
        Lc(self.0.iter().map(|(v, c)| (*v, *c * k)).collect())
    }

    pub fn eval(&self, w: &[Fr]) -> Fr {
        self.0.iter().map(|(v, c)| *c * w[*v]).sum()
    }
}

/// `a * b = c`
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub a: Lc,
    pub b: Lc,
    pub c: Lc,
}

#[derive(Debug, Clone, Default)]
pub struct ConstraintSystem {
    pub constraints: Vec<Constraint>,
    /// Witness induced by the claim; index 0 is one.
    pub assignment: Vec<Fr>,
}

impl ConstraintSystem {
    pub fn n_vars(&self) -> usize {
        self.assignment.len()
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }
}

/// Index of the first constraint the assignment violates.
pub fn first_violation(cs: &ConstraintSystem, assignment: &[Fr]) -> Option<usize> {
    if assignment.first() != Some(&Fr::ONE) || assignment.len() != cs.n_vars() {
        return Some(0);
    }
    cs.constraints
        .iter()
        .position(|k| k.a.eval(assignment) * k.b.eval(assignment) != k.c.eval(assignment))
}

pub fn evaluate_constraints(cs: &ConstraintSystem, assignment: &[Fr]) -> bool {
    first_violation(cs, assignment).is_none()
}

pub fn fr(v: &BigInt) -> Fr {
    let (sign, mag) = v.to_bytes_le();
    let f = Fr::from_le_bytes_mod_order(&mag);
    if sign == Sign::Minus {
        -f
    } else {
        f
    }
}

fn fr_i(v: i64) -> Fr {
    fr(&BigInt::from(v))
}

fn modulus() -> BigUint {
    BigUint::from_bytes_le(&Fr::MODULUS.to_bytes_le())
}

/// Representative in `(-p/2, p/2]`.
pub fn signed(f: &Fr) -> BigInt {
    let v = BigUint::from_bytes_le(&f.into_bigint().to_bytes_le());
    let p = modulus();
    if &v > &(&p >> 1) {
        -BigInt::from(p - v)
    } else {
        BigInt::from(v)
    }
}

fn pow2(bits: u32) -> Fr {
    Fr::from(2u64).pow([bits as u64])
}

/// Builds constraints and the induced witness side by side.
#[derive(Debug)]
pub struct Builder {
    cs: ConstraintSystem,
}

impl Default for Builder {
    fn default() -> Self {
        Builder {
            cs: ConstraintSystem {
                constraints: Vec::new(),
                assignment: vec![Fr::ONE],
            },
        }
    }
}

impl Builder {
    pub fn finish(self) -> ConstraintSystem {
        self.cs
    }

    pub fn value(&self, l: &Lc) -> Fr {
        l.eval(&self.cs.assignment)
    }

    pub fn witness(&mut self, v: Fr) -> Lc {
        self.cs.assignment.push(v);
        Lc::var(self.cs.assignment.len() - 1)
    }

    pub fn witness_big(&mut self, v: &BigInt) -> Lc {
        self.witness(fr(v))
    }

    fn enforce(&mut self, a: Lc, b: Lc, c: Lc) {
        self.cs.constraints.push(Constraint { a, b, c });
    }

    /// A statement that cannot hold (malformed claim shapes).
    pub fn unsatisfiable(&mut self) {
        self.enforce(Lc::constant(Fr::ONE), Lc::constant(Fr::ONE), Lc::zero());
    }

    pub fn mul(&mut self, a: &Lc, b: &Lc) -> Lc {
        if a.is_constant() {
            return b.scale(a.constant_value());
        }
        if b.is_constant() {
            return a.scale(b.constant_value());
        }
        let v = self.value(a) * self.value(b);
        let c = self.witness(v);
        self.enforce(a.clone(), b.clone(), c.clone());
        c
    }

    pub fn enforce_eq(&mut self, a: &Lc, b: &Lc) {
        self.enforce(a.sub(b), Lc::constant(Fr::ONE), Lc::zero());
    }

    pub fn boolean(&mut self, bit: bool) -> Lc {
        let b = self.witness(if bit { Fr::ONE } else { Fr::ZERO });
        self.enforce(b.clone(), b.sub(&Lc::constant(Fr::ONE)), Lc::zero());
        b
    }

    /// `a` lies in `[0, 2^w)` for a width chosen from its value.
    pub fn nonneg(&mut self, a: &Lc) {
        let v = signed(&self.value(a));
        let w = ((v.bits() as usize + 1).div_ceil(8) * 8).clamp(8, MAX_RANGE_BITS);
        // Two's-complement bits of a negative value cannot recompose to it.
        let m = v.magnitude();
        let raw = if v.is_negative() {
            ((BigUint::one() << w) - (m % (BigUint::one() << w))) % (BigUint::one() << w)
        } else {
            m.clone()
        };
        let mut sum = Lc::zero();
        for i in 0..w {
            let b = self.boolean(raw.bit(i as u64));
            sum = sum.add(&b.scale(pow2(i as u32)));
        }
        self.enforce_eq(&sum, a);
    }

    /// `a <= b`
    pub fn leq(&mut self, a: &Lc, b: &Lc) {
        self.nonneg(&b.sub(a));
    }

    /// `a < b`
    pub fn lt(&mut self, a: &Lc, b: &Lc) {
        self.nonneg(&b.sub(a).sub(&Lc::constant(Fr::ONE)));
    }

    fn constant_big(v: &BigInt) -> Lc {
        Lc::constant(fr(v))
    }

    fn witness_row(&mut self, r: &IntRow) -> (Vec<Lc>, Lc) {
        let a = r.a.iter().map(|v| self.witness_big(v)).collect();
        let b = self.witness_big(&r.b);
        (a, b)
    }

    fn constant_row(r: &IntRow) -> (Vec<Lc>, Lc) {
        (r.a.iter().map(Self::constant_big).collect(), Self::constant_big(&r.b))
    }

    fn eq_rows(&mut self, x: &(Vec<Lc>, Lc), y: &(Vec<Lc>, Lc)) {
        for (p, q) in x.0.iter().zip(&y.0) {
            self.enforce_eq(p, q);
        }
        self.enforce_eq(&x.1, &y.1);
    }

    fn dot(&mut self, a: &[Lc], b: &[Lc]) -> Lc {
        let mut s = Lc::zero();
        for (p, q) in a.iter().zip(b) {
            let t = self.mul(p, q);
            s = s.add(&t);
        }
        s
    }
}

/// Circuit form of a rational point: numerators and denominator.
struct PointVars {
    num: Vec<Lc>,
    den: Lc,
}

/// Model weights as witnesses, per layer.
struct Weights {
    w: Vec<Vec<Vec<Lc>>>,
    b: Vec<Vec<Lc>>,
}

fn alloc_weights(bld: &mut Builder, ctx: &Ctx<'_>) -> Weights {
    let mut w = Vec::new();
    let mut b = Vec::new();
    for layer in &ctx.qm.layers {
        w.push(
            layer
                .weights
                .iter()
                .map(|r| r.iter().map(|v| bld.witness(fr_i(*v))).collect())
                .collect(),
        );
        b.push(layer.bias.iter().map(|v| bld.witness(fr_i(*v))).collect());
    }
    Weights { w, b }
}

/// Forward pass at a point with code bits as relu selectors; each bit is
/// tied to the sign of its pre-activation (1 iff strictly positive).
/// Returns the logits.
fn forward_with_code(bld: &mut Builder, ctx: &Ctx<'_>, wt: &Weights, x: &PointVars, bits: &[Lc]) -> Vec<Lc> {
    let mut h = x.num.clone();
    let mut bias_scale = x.den.clone();
    let last = wt.w.len() - 1;
    let mut k = 0;
    for l in 0..=last {
        let mut z = Vec::with_capacity(wt.w[l].len());
        for (row, b) in wt.w[l].iter().zip(&wt.b[l]) {
            let s = bld.dot(row, &h);
            let t = bld.mul(b, &bias_scale);
            z.push(s.add(&t));
        }
        if l == last {
            return z;
        }
        let mut next = Vec::with_capacity(z.len());
        for pre in &z {
            let bit = &bits[k];
            k += 1;
            let u = bld.mul(bit, pre);
            // bit = 1: pre - 1 >= 0;  bit = 0: -pre >= 0
            let sel = u.scale(Fr::from(2u64)).sub(pre).sub(bit);
            bld.nonneg(&sel);
            next.push(u);
        }
        h = next;
        bias_scale = bias_scale.scale(pow2(ctx.scale_bits));
    }
    unreachable!("model has an output layer")
}

/// Masked affine maps `(M, c)` of every hidden layer and of the logits.
struct MapVars {
    hidden: Vec<(Vec<Vec<Lc>>, Vec<Lc>)>,
    output: (Vec<Vec<Lc>>, Vec<Lc>),
}

fn maps_with_code(bld: &mut Builder, ctx: &Ctx<'_>, wt: &Weights, bits: &[Lc]) -> MapVars {
    let n = ctx.qm.n_inputs;
    let mut cur = (wt.w[0].clone(), wt.b[0].clone());
    let mut hidden = Vec::new();
    let mut offset = 0;
    for l in 1..wt.w.len() {
        let prev = cur.0.len();
        let mb = &bits[offset..offset + prev];
        offset += prev;
        let masked_m: Vec<Vec<Lc>> = (0..prev)
            .map(|j| (0..n).map(|k| bld.mul(&mb[j], &cur.0[j][k])).collect())
            .collect();
        let masked_c: Vec<Lc> = (0..prev).map(|j| bld.mul(&mb[j], &cur.1[j])).collect();
        let shift = pow2(ctx.scale_bits * l as u32);
        let mut m = Vec::new();
        let mut c = Vec::new();
        for (wrow, b) in wt.w[l].iter().zip(&wt.b[l]) {
            let col: Vec<Lc> = (0..n)
                .map(|k| {
                    let column: Vec<Lc> = masked_m.iter().map(|r| r[k].clone()).collect();
                    bld.dot(wrow, &column)
                })
                .collect();
            m.push(col);
            let cc = bld.dot(wrow, &masked_c);
            c.push(cc.add(&b.scale(shift)));
        }
        hidden.push(std::mem::replace(&mut cur, (m, c)));
    }
    MapVars { hidden, output: cur }
}

/// Sliced cell rows of the code (neurons, then label rows), as in the exact module.
fn rows_with_code(bld: &mut Builder, ctx: &Ctx<'_>, maps: &MapVars, bits: &[Lc], s: &[i64]) -> Vec<(Vec<Lc>, Lc)> {
    let mut out = Vec::new();
    let mut i = 0;
    for (m, c) in &maps.hidden {
        for (mr, cr) in m.iter().zip(c) {
            // (1 - 2 bit) * (m, -c)
            let sign = Lc::constant(Fr::ONE).sub(&bits[i].scale(Fr::from(2u64)));
            let a: Vec<Lc> = mr.iter().map(|v| bld.mul(&sign, v)).collect();
            let b = bld.mul(&sign, &cr.scale(-Fr::ONE));
            out.push(slice(ctx, a, b, s));
            i += 1;
        }
    }
    let (m, c) = &maps.output;
    let y = ctx.label;
    for j in (0..c.len()).filter(|&j| j != y) {
        let a = m[j].iter().zip(&m[y]).map(|(p, q)| p.sub(q)).collect();
        out.push(slice(ctx, a, c[y].sub(&c[j]), s));
    }
    out
}

fn slice(ctx: &Ctx<'_>, a: Vec<Lc>, b: Lc, s: &[i64]) -> (Vec<Lc>, Lc) {
    let g = pow2(ctx.scale_bits);
    let mut b = b.scale(g);
    for (f, v) in ctx.spec.features.iter().zip(s) {
        b = b.sub(&a[f.index].scale(fr_i(*v)));
    }
    (ctx.spec.project_out(&a).into_iter().map(|v| v.scale(g)).collect(), b)
}

/// `b * den - a . num`
fn slack(bld: &mut Builder, row: &(Vec<Lc>, Lc), p: &PointVars) -> Lc {
    let t = bld.dot(&row.0, &p.num);
    let u = bld.mul(&row.1, &p.den);
    u.sub(&t)
}

fn grid_point(ctx: &Ctx<'_>, x: &[i64]) -> PointVars {
    PointVars {
        num: x.iter().map(|v| Lc::constant(fr_i(*v))).collect(),
        den: Lc::constant(pow2(ctx.scale_bits)),
    }
}

/// `z` as witness; the full point is `(z_ns * 2^s, S * den) / (den * 2^s)`.
fn witness_point(bld: &mut Builder, ctx: &Ctx<'_>, z: &RatPoint, s: &[i64]) -> (PointVars, PointVars) {
    let num: Vec<Lc> = z.num.iter().map(|v| bld.witness_big(v)).collect();
    let den = bld.witness_big(&z.den);
    bld.nonneg(&den.sub(&Lc::constant(Fr::ONE)));
    let g = pow2(ctx.scale_bits);
    let ns: Vec<Lc> = num.iter().map(|v| v.scale(g)).collect();
    let ss: Vec<Lc> = s.iter().map(|v| den.scale(fr_i(*v))).collect();
    let full = PointVars {
        num: ctx.spec.merge(&ns, &ss),
        den: den.scale(g),
    };
    (PointVars { num, den }, full)
}

fn code_bits(bld: &mut Builder, code: &faircert_core::ActivationCode) -> Vec<Lc> {
    code.bits().iter().map(|b| bld.boolean(*b)).collect()
}

fn rows_have_shape(ctx: &Ctx<'_>, rows: &[IntRow]) -> bool {
    let n_ns = ctx.qm.n_inputs - ctx.spec.k();
    rows.len() == ctx.n_hidden() + ctx.qm.n_classes - 1 && rows.iter().all(|r| r.a.len() == n_ns)
}

fn polytope(bld: &mut Builder, ctx: &Ctx<'_>, i: &PolytopeInst<'_>) -> Option<()> {
    if !ctx.code_valid(i.code) || !rows_have_shape(ctx, i.rows) {
        return None;
    }
    let wt = alloc_weights(bld, ctx);
    let bits = code_bits(bld, i.code);
    let x = grid_point(ctx, &ctx.spec.merge(i.x_ns, i.s));
    forward_with_code(bld, ctx, &wt, &x, &bits);
    let maps = maps_with_code(bld, ctx, &wt, &bits);
    let derived = rows_with_code(bld, ctx, &maps, &bits, i.s);
    let claimed: Vec<_> = i.rows.iter().map(|r| bld.witness_row(r)).collect();
    for (c, d) in claimed.iter().zip(&derived) {
        bld.eq_rows(c, d);
    }
    let xs = grid_point(ctx, i.x_ns);
    let h = ctx.n_hidden();
    match (i.label_consistent, i.mismatch_class) {
        (true, None) => {
            for r in &claimed[h..] {
                let sl = slack(bld, r, &xs);
                bld.nonneg(&sl);
            }
        }
        (false, Some(j)) => {
            let k = ctx.row_index(TightRow::Label(j))?;
            let sl = slack(bld, &claimed[k], &xs);
            bld.lt(&sl, &Lc::zero());
        }
        _ => return None,
    }
    Some(())
}

fn distance(bld: &mut Builder, ctx: &Ctx<'_>, i: &DistanceInst<'_>) -> Option<()> {
    if i.row.a.len() != i.x_ns.len() || i.established.a.len() != i.x_ns.len() {
        return None;
    }
    let row = bld.witness_row(i.row);
    bld.eq_rows(&row, &Builder::constant_row(i.established));
    let g = pow2(ctx.scale_bits);
    let xs: Vec<Lc> = i.x_ns.iter().map(|v| Lc::constant(fr_i(*v))).collect();
    let ax = bld.dot(&row.0, &xs);
    let t = row.1.scale(g).sub(&ax);
    let t2 = bld.mul(&t, &t);
    let norm = bld.dot(&row.0, &row.0);
    let m = norm.scale(g);
    // t^2 = D * M + r,  0 <= r < M
    let norm_v = signed(&bld.value(&norm)) << ctx.scale_bits;
    let t2_v = signed(&bld.value(&t2));
    let r_v = if norm_v.is_positive() { &t2_v - i.sq_distance * &norm_v } else { BigInt::zero() };
    let d = bld.witness_big(i.sq_distance);
    let r = bld.witness_big(&r_v);
    let dm = bld.mul(&d, &m);
    bld.enforce_eq(&t2, &dm.add(&r));
    bld.nonneg(&r);
    bld.lt(&r, &m);
    bld.nonneg(&d);
    Some(())
}

fn neighbor(bld: &mut Builder, ctx: &Ctx<'_>, i: &NeighborInst<'_>) -> Option<()> {
    let h = ctx.n_hidden();
    if i.neuron >= h || !ctx.code_valid(i.code) || !ctx.code_valid(i.owner) || !rows_have_shape(ctx, i.rows) {
        return None;
    }
    if i.z.dim() + ctx.spec.k() != ctx.qm.n_inputs || i.owner_rows.len() <= i.neuron {
        return None;
    }
    let wt = alloc_weights(bld, ctx);
    let bits = code_bits(bld, i.code);
    for (k, b) in bits.iter().enumerate() {
        let owner = i.owner.get(k);
        let want = if k == i.neuron { !owner } else { owner };
        bld.enforce_eq(b, &Lc::constant(if want { Fr::ONE } else { Fr::ZERO }));
    }
    let (_, full) = witness_point(bld, ctx, i.z, i.s);
    forward_with_code(bld, ctx, &wt, &full, &bits);
    let maps = maps_with_code(bld, ctx, &wt, &bits);
    let derived = rows_with_code(bld, ctx, &maps, &bits, i.s);
    let claimed: Vec<_> = i.rows.iter().map(|r| bld.witness_row(r)).collect();
    for (c, d) in claimed.iter().zip(&derived) {
        bld.eq_rows(c, d);
    }
    let shared = Builder::constant_row(&i.owner_rows[i.neuron]);
    let c = &claimed[i.neuron];
    for (p, q) in c.0.iter().zip(&shared.0) {
        bld.enforce_eq(&p.add(q), &Lc::zero());
    }
    bld.enforce_eq(&c.1.add(&shared.1), &Lc::zero());
    Some(())
}

fn boundary(bld: &mut Builder, ctx: &Ctx<'_>, i: &BoundaryInst<'_>) -> Option<()> {
    let k = ctx.row_index(i.tight)?;
    if !ctx.code_valid(i.owner) || !rows_have_shape(ctx, i.owner_rows) || i.z.dim() + ctx.spec.k() != ctx.qm.n_inputs {
        return None;
    }
    let n = ctx.qm.n_inputs;
    if i.map.m.len() != ctx.qm.n_classes || i.map.c.len() != ctx.qm.n_classes || i.map.m.iter().any(|r| r.len() != n) {
        return None;
    }
    let wt = alloc_weights(bld, ctx);
    let bits = code_bits(bld, i.owner);
    for (b, v) in bits.iter().zip(i.owner.bits()) {
        bld.enforce_eq(b, &Lc::constant(if *v { Fr::ONE } else { Fr::ZERO }));
    }
    let maps = maps_with_code(bld, ctx, &wt, &bits);
    let m: Vec<Vec<Lc>> = i.map.m.iter().map(|r| r.iter().map(|v| bld.witness_big(v)).collect()).collect();
    let c: Vec<Lc> = i.map.c.iter().map(|v| bld.witness_big(v)).collect();
    for (r, dr) in m.iter().zip(&maps.output.0) {
        for (p, q) in r.iter().zip(dr) {
            bld.enforce_eq(p, q);
        }
    }
    for (p, q) in c.iter().zip(&maps.output.1) {
        bld.enforce_eq(p, q);
    }

    let (z, full) = witness_point(bld, ctx, i.z, i.s);
    for (r, row) in i.owner_rows.iter().enumerate() {
        let sl = slack(bld, &Builder::constant_row(row), &z);
        if r == k {
            bld.enforce_eq(&sl, &Lc::zero());
        } else {
            bld.nonneg(&sl);
        }
    }
    let logits: Vec<Lc> = m
        .iter()
        .zip(&c)
        .map(|(mr, cr)| {
            let s = bld.dot(mr, &full.num);
            let t = bld.mul(cr, &full.den);
            s.add(&t)
        })
        .collect();
    let y = ctx.label;
    match (i.expect, i.tight) {
        (true, TightRow::Label(j)) => {
            bld.enforce_eq(&logits[j], &logits[y]);
            for (cl, l) in logits.iter().enumerate() {
                if cl != y && cl != j {
                    bld.leq(l, &logits[y]);
                }
            }
        }
        (false, TightRow::Neuron(_)) => {
            for (cl, l) in logits.iter().enumerate() {
                if cl != y {
                    bld.lt(l, &logits[y]);
                }
            }
        }
        _ => return None,
    }
    Some(())
}

fn order(bld: &mut Builder, i: &OrderInst<'_>) -> Option<()> {
    let d = bld.witness_big(i.claimed);
    bld.enforce_eq(&d, &Builder::constant_big(i.established));
    for v in i.others {
        bld.leq(&d, &Builder::constant_big(v));
    }
    Some(())
}

fn min(bld: &mut Builder, i: &MinInst<'_>) -> Option<()> {
    if i.values.is_empty() || i.values.len() != i.established.len() {
        return None;
    }
    let vals: Vec<Lc> = i.values.iter().map(|v| bld.witness_big(v)).collect();
    for (v, e) in vals.iter().zip(i.established) {
        bld.enforce_eq(v, &Builder::constant_big(e));
    }
    let m = bld.witness_big(i.min);
    let mut prod = Lc::constant(Fr::ONE);
    for v in &vals {
        bld.leq(&m, v);
        prod = bld.mul(&prod, &v.sub(&m));
    }
    bld.enforce_eq(&prod, &Lc::zero());
    Some(())
}

fn inference(bld: &mut Builder, ctx: &Ctx<'_>, i: &InferenceInst<'_>) -> Option<()> {
    if i.x.len() != ctx.qm.n_inputs || !ctx.code_valid(i.code) || i.label >= ctx.qm.n_classes {
        return None;
    }
    let wt = alloc_weights(bld, ctx);
    let bits = code_bits(bld, i.code);
    let logits = forward_with_code(bld, ctx, &wt, &grid_point(ctx, i.x), &bits);
    let label = bld.witness(Fr::from(i.label as u64));
    bld.enforce_eq(&label, &Lc::constant(Fr::from(ctx.label as u64)));
    // argmax with the lowest index winning ties
    for (j, l) in logits.iter().enumerate() {
        if j < i.label {
            bld.lt(l, &logits[i.label]);
        } else if j > i.label {
            bld.leq(l, &logits[i.label]);
        }
    }
    Some(())
}

/// Lowers one check; claims of the wrong shape compile to an unsatisfiable system.
pub fn compile_check(ctx: &Ctx<'_>, inst: &CheckInstance<'_>) -> ConstraintSystem {
    let mut bld = Builder::default();
    let ok = match inst {
        CheckInstance::Polytope(i) => polytope(&mut bld, ctx, i),
        CheckInstance::Distance(i) => distance(&mut bld, ctx, i),
        CheckInstance::Neighbor(i) => neighbor(&mut bld, ctx, i),
        CheckInstance::Boundary(i) => boundary(&mut bld, ctx, i),
        CheckInstance::Order(i) => order(&mut bld, i),
        CheckInstance::Min(i) => min(&mut bld, i),
        CheckInstance::Inference(i) => inference(&mut bld, ctx, i),
    };
    if ok.is_none() {
        bld.unsatisfiable();
    }
    bld.finish()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KindCost {
    pub instances: u64,
    pub constraints: u64,
}

/// Compiles and evaluates every check, tallying constraints per kind.
#[derive(Debug, Clone, Default)]
pub struct ConstraintBackend {
    pub costs: BTreeMap<CheckKind, KindCost>,
}

impl ConstraintBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constraints(&self, kind: CheckKind) -> u64 {
        self.costs.get(&kind).map_or(0, |c| c.constraints)
    }
}

impl CheckBackend for ConstraintBackend {
    fn name(&self) -> &'static str {
        "constraint"
    }

    fn check(&mut self, ctx: &Ctx<'_>, inst: &CheckInstance<'_>) -> bool {
        let cs = compile_check(ctx, inst);
        let e = self.costs.entry(inst.kind()).or_default();
        e.instances += 1;
        e.constraints += cs.len() as u64;
        evaluate_constraints(&cs, &cs.assignment)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{QLayer, QuantizedModel, QuantizedSpec};

    const S: u32 = 16;

    fn ctx<'a>(qm: &'a QuantizedModel, spec: &'a QuantizedSpec) -> Ctx<'a> {
        Ctx { qm, spec, scale_bits: S, label: 0 }
    }

    fn tiny() -> QuantizedModel {
        QuantizedModel {
            n_inputs: 2,
            n_classes: 2,
            layers: vec![
                QLayer { weights: vec![vec![1, 0], vec![0, 1]], bias: vec![0, 0] },
                QLayer { weights: vec![vec![1, 0], vec![0, 1]], bias: vec![0, 0] },
            ],
        }
    }

    #[test]
    fn field_round_trip_of_signed_values() {
        for v in [0i64, 1, -1, 1 << 40, -(1 << 62)] {
            assert_eq!(signed(&fr_i(v)), BigInt::from(v));
        }
        let big: BigInt = BigInt::one() << 240;
        assert_eq!(signed(&fr(&(-big.clone()))), -big);
    }

    #[test]
    fn range_gadget_rejects_negatives() {
        for (v, ok) in [(0i64, true), (255, true), (256, true), (-1, false), (-256, false)] {
            let mut b = Builder::default();
            let x = b.witness(fr_i(v));
            b.nonneg(&x);
            let cs = b.finish();
            assert_eq!(evaluate_constraints(&cs, &cs.assignment), ok, "{v}");
        }
    }

    #[test]
    fn distance_golden_count() {
        // a = (3, 4), b = 10 at the origin: t = 10 * 2^16, |a|^2 = 25.
        let qm = tiny();
        let spec = QuantizedSpec::default();
        let row = IntRow { a: vec![3.into(), 4.into()], b: 10.into() };
        let d = crate::exact::squared_distance_fixed(&row, &[0, 0], S).unwrap();
        assert_eq!(d, BigInt::from(4 << 16));
        let inst = CheckInstance::Distance(DistanceInst { x_ns: &[0, 0], established: &row, row: &row, sq_distance: &d });
        let cs = compile_check(&ctx(&qm, &spec), &inst);
        assert!(evaluate_constraints(&cs, &cs.assignment));
        assert_eq!(cs.len(), DISTANCE_2D_GOLDEN);

        let bad = &d + 1;
        let inst = CheckInstance::Distance(DistanceInst { x_ns: &[0, 0], established: &row, row: &row, sq_distance: &bad });
        let cs = compile_check(&ctx(&qm, &spec), &inst);
        assert!(!evaluate_constraints(&cs, &cs.assignment));
    }

    /// Row equality (3), products t^2, a_0^2, a_1^2, D*M (4), the division
    /// identity (1), and ranges for r = 0 (8 + 1), M - 1 - r < 2^21 (24 + 1)
    /// and D = 2^18 (24 + 1).
    const DISTANCE_2D_GOLDEN: usize = 3 + 4 + 1 + 9 + 25 + 25;

    #[test]
    fn min_product_pins_membership() {
        let qm = tiny();
        let spec = QuantizedSpec::default();
        let e: Vec<BigInt> = [3, 1, 2].iter().map(|v| BigInt::from(*v)).collect();
        let run = |m: i64| {
            let m = BigInt::from(m);
            let cs = compile_check(
                &ctx(&qm, &spec),
                &CheckInstance::Min(MinInst { established: &e, values: &e, min: &m }),
            );
            evaluate_constraints(&cs, &cs.assignment)
        };
        assert!(run(1));
        assert!(!run(0));
        assert!(!run(2));
    }
}
