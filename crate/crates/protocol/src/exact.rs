//! Exact integer arithmetic over the quantized model.
//!
//! With weights on the grid `2^-s`, the pre-activation of a layer-`l` neuron
//! (1-based) under a fixed activation code is `(M x + c) / 2^(s*l)` for
//! integer `M`, `c`. Region rows drop the positive scale, so every row is an
//! integer inequality `a . x <= b`. Points are rationals `num / den`.

use faircert_core::{ActivationCode, TightRow};
use num_bigint::{BigInt, Sign};
use num_integer::Integer;
use num_traits::{FromPrimitive, One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::bigint_serde;
use crate::encoding::{QuantizedModel, QuantizedSpec};

/// `a . x <= b`
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IntRow {
    #[serde(with = "bigint_serde::vec")]
    pub a: Vec<BigInt>,
    #[serde(with = "bigint_serde::one")]
    pub b: BigInt,
}

impl IntRow {
    /// `b * den - a . num`; nonnegative iff the point satisfies the row.
    pub fn slack_num(&self, p: &RatPoint) -> BigInt {
        &self.b * &p.den - dot(&self.a, &p.num)
    }

    pub fn norm_sq(&self) -> BigInt {
        self.a.iter().map(|v| v * v).sum()
    }

    pub fn negated(&self) -> IntRow {
        IntRow {
            a: self.a.iter().map(|v| -v).collect(),
            b: -&self.b,
        }
    }

    pub fn to_f64(&self) -> (Vec<f64>, f64) {
        (self.a.iter().map(big_to_f64).collect(), big_to_f64(&self.b))
    }
}

/// A point with rational coordinates `num[i] / den`, `den > 0`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RatPoint {
    #[serde(with = "bigint_serde::vec")]
    pub num: Vec<BigInt>,
    #[serde(with = "bigint_serde::one")]
    pub den: BigInt,
}

impl RatPoint {
    pub fn from_grid(q: &[i64], scale_bits: u32) -> RatPoint {
        RatPoint {
            num: q.iter().map(|v| BigInt::from(*v)).collect(),
            den: BigInt::one() << scale_bits,
        }
    }

    /// Rounds each coordinate to the grid `2^-bits` (ties to even).
    pub fn from_f64(x: &[f64], bits: u32) -> RatPoint {
        let scale = (bits as f64).exp2();
        RatPoint {
            num: x
                .iter()
                .map(|v| BigInt::from_f64((v * scale).round_ties_even()).expect("finite coordinate"))
                .collect(),
            den: BigInt::one() << bits,
        }
        .reduced()
    }

    pub fn dim(&self) -> usize {
        self.num.len()
    }

    pub fn reduced(mut self) -> RatPoint {
        let g = self.num.iter().fold(self.den.clone(), |g, v| g.gcd(v));
        if !g.is_one() && !g.is_zero() {
            for v in &mut self.num {
                *v /= &g;
            }
            self.den /= &g;
        }
        self
    }

    pub fn to_f64(&self) -> Vec<f64> {
        let d = big_to_f64(&self.den);
        self.num.iter().map(|v| big_to_f64(v) / d).collect()
    }

    /// Full input point from sliced coordinates and grid-valued sensitive values.
    pub fn merge(&self, spec: &QuantizedSpec, s: &[i64], scale_bits: u32) -> RatPoint {
        let grid = BigInt::one() << scale_bits;
        let den = self.den.lcm(&grid);
        let up = &den / &self.den;
        let up_s = &den / &grid;
        let ns: Vec<BigInt> = self.num.iter().map(|v| v * &up).collect();
        let ss: Vec<BigInt> = s.iter().map(|v| BigInt::from(*v) * &up_s).collect();
        RatPoint {
            num: spec.merge(&ns, &ss),
            den,
        }
    }

    /// Moves the point onto `row.a . x = row.b` along the coordinate with the
    /// largest |a_k|; the result satisfies the equality exactly.
    pub fn snap_to_hyperplane(&self, row: &IntRow) -> Option<RatPoint> {
        let k = (0..row.a.len()).max_by(|&i, &j| row.a[i].abs().cmp(&row.a[j].abs()).then(j.cmp(&i)))?;
        let ak = &row.a[k];
        if ak.is_zero() {
            return None;
        }
        let mag = ak.abs();
        let rest: BigInt = (0..row.a.len())
            .filter(|&i| i != k)
            .map(|i| &row.a[i] * &self.num[i])
            .sum();
        let mut num: Vec<BigInt> = self.num.iter().map(|v| v * &mag).collect();
        let target = &row.b * &self.den - rest;
        num[k] = if ak.sign() == Sign::Minus { -target } else { target };
        Some(
            RatPoint {
                num,
                den: &self.den * &mag,
            }
            .reduced(),
        )
    }
}

/// Pre-activations (layer-major) and logits of the exact forward pass at a
/// rational point, as numerators; signs and within-layer order are exact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Forward {
    pub pre: Vec<BigInt>,
    pub logits: Vec<BigInt>,
}

impl Forward {
    pub fn code(&self) -> ActivationCode {
        ActivationCode::from_bits(self.pre.iter().map(|v| v.is_positive()).collect())
    }

    pub fn has_tie(&self) -> bool {
        self.pre.iter().any(Zero::is_zero)
    }
}

pub fn forward(qm: &QuantizedModel, x: &RatPoint, scale_bits: u32) -> Forward {
    let mut h = x.num.clone();
    let mut bias_scale = x.den.clone();
    let mut pre = Vec::new();
    let last = qm.layers.len() - 1;
    for (l, layer) in qm.layers.iter().enumerate() {
        let z: Vec<BigInt> = layer
            .weights
            .iter()
            .zip(&layer.bias)
            .map(|(row, b)| dot_i64(row, &h) + BigInt::from(*b) * &bias_scale)
            .collect();
        if l == last {
            return Forward { pre, logits: z };
        }
        h = z.iter().map(|v| if v.is_positive() { v.clone() } else { BigInt::zero() }).collect();
        pre.extend(z);
        bias_scale <<= scale_bits;
    }
    unreachable!("model has an output layer")
}

/// `(M x + c) / 2^(s*level)` per output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntAffine {
    #[serde(with = "bigint_serde::mat")]
    pub m: Vec<Vec<BigInt>>,
    #[serde(with = "bigint_serde::vec")]
    pub c: Vec<BigInt>,
}

/// Masked affine maps of every hidden layer and of the logits for one code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeMaps {
    pub hidden: Vec<IntAffine>,
    pub output: IntAffine,
}

pub fn code_maps(qm: &QuantizedModel, code: &ActivationCode, scale_bits: u32) -> CodeMaps {
    let sizes = qm.hidden_sizes();
    assert_eq!(code.len(), sizes.iter().sum::<usize>(), "code length");
    let first = &qm.layers[0];
    let mut cur = IntAffine {
        m: first
            .weights
            .iter()
            .map(|r| r.iter().map(|v| BigInt::from(*v)).collect())
            .collect(),
        c: first.bias.iter().map(|v| BigInt::from(*v)).collect(),
    };
    let mut hidden = Vec::new();
    let mut offset = 0;
    let n = qm.n_inputs;
    for (l, layer) in qm.layers.iter().enumerate().skip(1) {
        let prev_size = sizes[l - 1];
        let bits = &code.bits()[offset..offset + prev_size];
        offset += prev_size;
        let bias_shift = scale_bits * l as u32;
        let next = IntAffine {
            m: layer
                .weights
                .iter()
                .map(|wrow| {
                    (0..n)
                        .map(|k| {
                            (0..prev_size)
                                .filter(|&j| bits[j])
                                .map(|j| BigInt::from(wrow[j]) * &cur.m[j][k])
                                .sum()
                        })
                        .collect()
                })
                .collect(),
            c: layer
                .weights
                .iter()
                .zip(&layer.bias)
                .map(|(wrow, b)| {
                    let masked: BigInt = (0..prev_size)
                        .filter(|&j| bits[j])
                        .map(|j| BigInt::from(wrow[j]) * &cur.c[j])
                        .sum();
                    masked + (BigInt::from(*b) << bias_shift)
                })
                .collect(),
        };
        hidden.push(std::mem::replace(&mut cur, next));
    }
    CodeMaps { hidden, output: cur }
}

impl CodeMaps {
    /// Neuron rows (layer-major) followed by label rows `j != label`, ascending.
    pub fn cell_rows(&self, code: &ActivationCode, label: usize) -> Vec<(TightRow, IntRow)> {
        let mut out = Vec::new();
        let mut i = 0;
        for layer in &self.hidden {
            for (m, c) in layer.m.iter().zip(&layer.c) {
                let row = IntRow { a: m.clone(), b: -c };
                out.push((TightRow::Neuron(i), if code.get(i) { row.negated() } else { row }));
                i += 1;
            }
        }
        let o = &self.output;
        for j in (0..o.c.len()).filter(|&j| j != label) {
            let a = o.m[j].iter().zip(&o.m[label]).map(|(p, q)| p - q).collect();
            out.push((TightRow::Label(j), IntRow { a, b: &o.c[label] - &o.c[j] }));
        }
        out
    }

    /// Logit numerators at a rational point; comparisons between them are exact.
    pub fn logits_at(&self, x: &RatPoint) -> Vec<BigInt> {
        self.output
            .m
            .iter()
            .zip(&self.output.c)
            .map(|(m, c)| dot(m, &x.num) + c * &x.den)
            .collect()
    }
}

/// Fixes the sensitive coordinates at grid values `s` and rescales so the row stays integral:
/// `a' = a_ns * 2^s`, `b' = b * 2^s - sum_j a_j S_j`.
pub fn slice_row(row: &IntRow, spec: &QuantizedSpec, s: &[i64], scale_bits: u32) -> IntRow {
    let mut b = &row.b << scale_bits;
    for (f, v) in spec.features.iter().zip(s) {
        b -= &row.a[f.index] * BigInt::from(*v);
    }
    IntRow {
        a: spec.project_out(&row.a).into_iter().map(|v| v << scale_bits).collect(),
        b,
    }
}

/// Squared distance from the grid point `x = X / 2^s` to `a . y = b`, as
/// `floor(d^2 * 2^s)`. Rounding down keeps every derived radius a lower bound.
pub fn squared_distance_fixed(row: &IntRow, x: &[i64], scale_bits: u32) -> Option<BigInt> {
    let norm = row.norm_sq();
    if norm.is_zero() {
        return None;
    }
    let t = (&row.b << scale_bits) - dot_i64_rev(&row.a, x);
    Some((&t * &t).div_floor(&(norm << scale_bits)))
}

/// Squared distance from the grid point to the nearest face of `[-B, B]^d`
/// (`B` given on the grid), in the same fixed-point form.
pub fn box_distance_fixed(x: &[i64], bound_q: i64, scale_bits: u32) -> BigInt {
    let bd = x.iter().map(|v| bound_q - v.abs()).min().unwrap_or(bound_q).max(0);
    let bd = BigInt::from(bd);
    (&bd * &bd) >> scale_bits
}

/// Largest double `e >= 0` with `e^2 <= D / 2^s`.
pub fn epsilon_from_fixed(d: &BigInt, scale_bits: u32) -> f64 {
    if !d.is_positive() {
        return 0.0;
    }
    let approx = (big_to_f64(d) / (scale_bits as f64).exp2()).sqrt();
    let fits = |e: f64| -> bool {
        // e = m * 2^k exactly; compare m^2 * 2^(2k + s) with D.
        let (m, k) = decompose(e);
        let lhs = BigInt::from(m) * BigInt::from(m);
        let shift = 2 * k + scale_bits as i64;
        if shift >= 0 {
            (lhs << shift as usize) <= *d
        } else {
            lhs <= (d << (-shift) as usize)
        }
    };
    let mut e = approx;
    while e > 0.0 && !fits(e) {
        e = f64::from_bits(e.to_bits() - 1);
    }
    // Walk up while the next double still fits.
    loop {
        let next = f64::from_bits(e.to_bits() + 1);
        if fits(next) {
            e = next;
        } else {
            return e;
        }
    }
}

fn decompose(e: f64) -> (u64, i64) {
    if e == 0.0 {
        return (0, 0);
    }
    let bits = e.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    if exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), exp - 1075)
    }
}

pub fn dot(a: &[BigInt], b: &[BigInt]) -> BigInt {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dot_i64(a: &[i64], b: &[BigInt]) -> BigInt {
    a.iter().zip(b).map(|(x, y)| BigInt::from(*x) * y).sum()
}

fn dot_i64_rev(a: &[BigInt], b: &[i64]) -> BigInt {
    a.iter().zip(b).map(|(x, y)| x * BigInt::from(*y)).sum()
}

pub fn big_to_f64(v: &BigInt) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

/// Index of the largest value, lowest index on ties.
pub fn argmax_big(values: &[BigInt]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// True iff the two largest entries are equal.
pub fn top_two_tied(values: &[BigInt]) -> bool {
    let top = argmax_big(values);
    values
        .iter()
        .enumerate()
        .any(|(i, v)| i != top && *v == values[top])
}
