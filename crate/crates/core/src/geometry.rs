//! Linear-region geometry of ReLU networks.
//!
//! A ReLU network is affine on each region where the on/off pattern of its
//! hidden neurons is fixed. The pattern is an [`ActivationCode`]; the region
//! is the [`Polytope`] `{x | A x <= b}` with one row per hidden neuron. A
//! [`Cell`] further restricts a region to the points assigned one label,
//! which adds one row per competing class; facets lying on those extra rows
//! are the decision boundary.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::lp;
use crate::model::{dot, ModelWeights};
use crate::spec::SensitiveSpec;

/// Absolute tolerance for real-valued equality checks.
pub const TOLERANCE: f64 = 1e-9;

/// On/off state of every hidden neuron, layer-major.
///
/// Bit `i` is set iff the pre-activation of neuron `i` is strictly positive.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct ActivationCode {
    bits: Vec<bool>,
}

impl ActivationCode {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        ActivationCode { bits }
    }

    pub fn from_pre_activations(pre: &[f64]) -> Self {
        ActivationCode {
            bits: pre.iter().map(|v| *v > 0.0).collect(),
        }
    }

    pub fn all(value: bool, len: usize) -> Self {
        ActivationCode { bits: vec![value; len] }
    }

    /// The code with index `n` read as a little-endian bit pattern.
    pub fn from_index(n: u64, len: usize) -> Self {
        ActivationCode {
            bits: (0..len).map(|i| (n >> i) & 1 == 1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn flipped(&self, i: usize) -> Self {
        let mut bits = self.bits.clone();
        bits[i] = !bits[i];
        ActivationCode { bits }
    }

    pub fn hamming(&self, other: &Self) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count()
            + self.bits.len().abs_diff(other.bits.len())
    }

    pub fn parse(s: &str) -> Option<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Some(false),
                '1' => Some(true),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()
            .map(ActivationCode::from_bits)
    }
}

impl fmt::Display for ActivationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.bits {
            f.write_str(if *b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for ActivationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ActivationCode({self})")
    }
}

impl Serialize for ActivationCode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ActivationCode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ActivationCode::parse(&s).ok_or_else(|| serde::de::Error::custom("activation code must be a 0/1 string"))
    }
}

/// `normal . x <= offset`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl Halfspace {
    pub fn slack(&self, x: &[f64]) -> f64 {
        self.offset - dot(&self.normal, x)
    }

    pub fn norm(&self) -> f64 {
        self.normal.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Removes the sensitive columns, folding their fixed values into the offset.
    pub fn reduce(&self, spec: &SensitiveSpec, s: &[f64]) -> Halfspace {
        let fixed: f64 = spec
            .features
            .iter()
            .zip(s)
            .map(|(f, v)| self.normal[f.index] * v)
            .sum();
        Halfspace {
            normal: spec.project_out(&self.normal),
            offset: self.offset - fixed,
        }
    }
}

/// `x -> matrix x + offset`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub matrix: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
}

impl AffineMap {
    pub fn identity(n: usize) -> Self {
        AffineMap {
            matrix: (0..n)
                .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
            offset: vec![0.0; n],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix
            .iter()
            .zip(&self.offset)
            .map(|(row, c)| dot(row, x) + c)
            .collect()
    }

    /// `W . self + b`
    fn compose(&self, weights: &[Vec<f64>], bias: &[f64]) -> AffineMap {
        let n = self.matrix.first().map_or(0, Vec::len);
        let matrix = weights
            .iter()
            .map(|w| {
                (0..n)
                    .map(|j| w.iter().zip(&self.matrix).map(|(wk, row)| wk * row[j]).sum())
                    .collect()
            })
            .collect();
        let offset = weights
            .iter()
            .zip(bias)
            .map(|(w, b)| dot(w, &self.offset) + b)
            .collect();
        AffineMap { matrix, offset }
    }

    fn masked(mut self, mask: &[bool]) -> AffineMap {
        for (i, on) in mask.iter().enumerate() {
            if !on {
                self.matrix[i].iter_mut().for_each(|v| *v = 0.0);
                self.offset[i] = 0.0;
            }
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    pub a_matrix: Vec<Vec<f64>>,
    pub b_vector: Vec<f64>,
    pub dim: usize,
    pub source_code: ActivationCode,
}

impl Polytope {
    pub fn row(&self, i: usize) -> Halfspace {
        Halfspace {
            normal: self.a_matrix[i].clone(),
            offset: self.b_vector[i],
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = Halfspace> + '_ {
        (0..self.b_vector.len()).map(|i| self.row(i))
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.rows().all(|h| h.slack(x) >= -tol)
    }

    pub fn contains_strictly(&self, x: &[f64]) -> bool {
        self.rows().all(|h| h.slack(x) > 0.0)
    }
}

/// Which constraint of a [`Cell`] a facet lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum TightRow {
    /// Hidden neuron `i` changes state across the facet.
    Neuron(usize),
    /// The logit of class `j` ties the cell's label across the facet.
    Label(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Facet {
    pub owner: ActivationCode,
    pub tight_row: TightRow,
    pub hyperplane: Halfspace,
    pub is_boundary: bool,
    /// Owner code with the tight neuron's bit flipped; `None` for boundary facets.
    pub flipped_code: Option<ActivationCode>,
}

/// The points of one activation region that receive `label`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub polytope: Polytope,
    pub label: usize,
    /// `(class j, row)` meaning `logit_j - logit_label <= 0`.
    pub label_rows: Vec<(usize, Halfspace)>,
}

impl Cell {
    pub fn code(&self) -> &ActivationCode {
        &self.polytope.source_code
    }

    pub fn dim(&self) -> usize {
        self.polytope.dim
    }

    pub fn rows(&self) -> Vec<(TightRow, Halfspace)> {
        let neurons = self
            .polytope
            .rows()
            .enumerate()
            .map(|(i, h)| (TightRow::Neuron(i), h));
        let labels = self
            .label_rows
            .iter()
            .map(|(j, h)| (TightRow::Label(*j), h.clone()));
        neurons.chain(labels).collect()
    }

    pub fn halfspaces(&self) -> Vec<Halfspace> {
        self.rows().into_iter().map(|(_, h)| h).collect()
    }

    pub fn row(&self, tight: TightRow) -> Option<Halfspace> {
        match tight {
            TightRow::Neuron(i) => (i < self.polytope.b_vector.len()).then(|| self.polytope.row(i)),
            TightRow::Label(j) => self.label_rows.iter().find(|(k, _)| *k == j).map(|(_, h)| h.clone()),
        }
    }

    pub fn reduce(&self, spec: &SensitiveSpec, s: &[f64]) -> Result<Cell> {
        Ok(Cell {
            polytope: reduce_poly_dim(&self.polytope, spec, s)?,
            label: self.label,
            label_rows: self
                .label_rows
                .iter()
                .map(|(j, h)| (*j, h.reduce(spec, s)))
                .collect(),
        })
    }

    pub fn facet(&self, tight: TightRow) -> Option<Facet> {
        let hyperplane = self.row(tight)?;
        let (is_boundary, flipped_code) = match tight {
            TightRow::Neuron(i) => (false, Some(self.code().flipped(i))),
            TightRow::Label(_) => (true, None),
        };
        Some(Facet {
            owner: self.code().clone(),
            tight_row: tight,
            hyperplane,
            is_boundary,
            flipped_code,
        })
    }
}

fn check_code(w: &ModelWeights, code: &ActivationCode) -> Result<()> {
    if code.len() != w.n_hidden() {
        return Err(Error::Dimension {
            context: "activation code",
            expected: w.n_hidden(),
            found: code.len(),
        });
    }
    Ok(())
}

pub fn activation_code(w: &ModelWeights, x: &[f64]) -> Result<ActivationCode> {
    let (pre, _) = w.forward(x)?;
    Ok(ActivationCode::from_pre_activations(&pre))
}

/// True if some hidden pre-activation at `x` is exactly zero.
pub fn on_region_boundary(w: &ModelWeights, x: &[f64]) -> Result<bool> {
    let (pre, _) = w.forward(x)?;
    Ok(pre.iter().any(|v| *v == 0.0))
}

/// Pre-activation of every hidden neuron as an affine function of the input,
/// with earlier ReLUs fixed by `code`; followed by the logit map.
fn masked_maps(w: &ModelWeights, code: &ActivationCode) -> (Vec<AffineMap>, AffineMap) {
    let mut current = AffineMap::identity(w.n_inputs);
    let mut pre = Vec::with_capacity(w.hidden_layers().len());
    let mut offset = 0;
    for layer in w.hidden_layers() {
        let z = current.compose(&layer.weights, &layer.bias);
        let width = layer.out_dim();
        current = z.clone().masked(&code.bits()[offset..offset + width]);
        pre.push(z);
        offset += width;
    }
    let out = w.output_layer();
    (pre, current.compose(&out.weights, &out.bias))
}

pub fn polytope_from_code(w: &ModelWeights, code: &ActivationCode) -> Result<Polytope> {
    check_code(w, code)?;
    let (pre, _) = masked_maps(w, code);
    let mut a_matrix = Vec::with_capacity(code.len());
    let mut b_vector = Vec::with_capacity(code.len());
    let rows = pre
        .iter()
        .flat_map(|m| m.matrix.iter().zip(&m.offset));
    for (i, (g, c)) in rows.enumerate() {
        if code.get(i) {
            // g x + c > 0  ->  -g x <= c
            a_matrix.push(g.iter().map(|v| -v).collect());
            b_vector.push(*c);
        } else {
            a_matrix.push(g.clone());
            b_vector.push(-c);
        }
    }
    Ok(Polytope {
        a_matrix,
        b_vector,
        dim: w.n_inputs,
        source_code: code.clone(),
    })
}

/// The affine logit map `f_R(x) = W_R x + b_R` of the region with this code.
pub fn linear_map_from_code(w: &ModelWeights, code: &ActivationCode) -> Result<AffineMap> {
    check_code(w, code)?;
    Ok(masked_maps(w, code).1)
}

/// Region of `code` restricted to points labelled `label`, in the full input space.
pub fn decision_cell(w: &ModelWeights, code: &ActivationCode, label: usize) -> Result<Cell> {
    if label >= w.n_classes {
        return Err(Error::Dimension {
            context: "label",
            expected: w.n_classes,
            found: label,
        });
    }
    let polytope = polytope_from_code(w, code)?;
    let logits = linear_map_from_code(w, code)?;
    let label_rows = (0..w.n_classes)
        .filter(|&j| j != label)
        .map(|j| {
            let normal = logits.matrix[j]
                .iter()
                .zip(&logits.matrix[label])
                .map(|(a, b)| a - b)
                .collect();
            let offset = logits.offset[label] - logits.offset[j];
            (j, Halfspace { normal, offset })
        })
        .collect();
    Ok(Cell {
        polytope,
        label,
        label_rows,
    })
}

/// Fixes the sensitive coordinates at `s` and drops their columns.
pub fn reduce_poly_dim(p: &Polytope, spec: &SensitiveSpec, s: &[f64]) -> Result<Polytope> {
    spec.check_tuple(s)?;
    if let Some(f) = spec.features.iter().find(|f| f.index >= p.dim) {
        return Err(Error::Spec(format!(
            "sensitive index {} out of range for a {}-dimensional polytope",
            f.index, p.dim
        )));
    }
    let (a_matrix, b_vector) = p
        .rows()
        .map(|h| {
            let r = h.reduce(spec, s);
            (r.normal, r.offset)
        })
        .unzip();
    Ok(Polytope {
        a_matrix,
        b_vector,
        dim: p.dim - spec.k(),
        source_code: p.source_code.clone(),
    })
}

/// `|b - a.x| / ||a||`, the distance from `x` to the hyperplane `a.x = b`.
pub fn projection_distance(x: &[f64], hyperplane: &Halfspace) -> Result<f64> {
    if x.len() != hyperplane.normal.len() {
        return Err(Error::Dimension {
            context: "hyperplane",
            expected: hyperplane.normal.len(),
            found: x.len(),
        });
    }
    let norm = hyperplane.norm();
    if norm == 0.0 {
        return Err(Error::ZeroNormal);
    }
    Ok(hyperplane.slack(x).abs() / norm)
}

/// Orthogonal projection of `x` onto the hyperplane `a.x = b`.
pub fn projection_foot(x: &[f64], hyperplane: &Halfspace) -> Result<Vec<f64>> {
    let norm_sq: f64 = hyperplane.normal.iter().map(|v| v * v).sum();
    if norm_sq == 0.0 {
        return Err(Error::ZeroNormal);
    }
    let t = hyperplane.slack(x) / norm_sq;
    Ok(x.iter().zip(&hyperplane.normal).map(|(xi, ai)| xi + t * ai).collect())
}

/// Chebyshev center of `p` intersected with `[-box_bound, box_bound]^d`.
pub fn representative_point(p: &Polytope, box_bound: f64) -> Result<Vec<f64>> {
    let rows: Vec<Halfspace> = p.rows().collect();
    match lp::chebyshev_center(&rows, None, p.dim, box_bound)? {
        lp::Center::Feasible { point, .. } => Ok(point),
        lp::Center::Infeasible => Err(Error::Infeasible),
    }
}

/// Chebyshev center of a facet of `cell`, measured within the facet's hyperplane.
pub fn facet_representative_point(
    cell: &Cell,
    tight: TightRow,
    box_bound: f64,
) -> Result<lp::Center> {
    let rows = cell.rows();
    let eq = cell.row(tight).ok_or(Error::Dimension {
        context: "facet row",
        expected: rows.len(),
        found: usize::MAX,
    })?;
    let others: Vec<Halfspace> = rows
        .into_iter()
        .filter(|(t, _)| *t != tight)
        .map(|(_, h)| h)
        .collect();
    lp::chebyshev_center(&others, Some(&eq), cell.dim(), box_bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Layer;
    use crate::spec::SensitiveFeature;

    fn identity_net() -> ModelWeights {
        ModelWeights::new(
            2,
            vec![
                Layer {
                    weights: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                    bias: vec![0.0, 0.0],
                },
                Layer {
                    weights: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                    bias: vec![0.0, 0.0],
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn activation_code_identity_examples() {
        let w = identity_net();
        assert_eq!(activation_code(&w, &[1.0, -1.0]).unwrap().to_string(), "10");
        assert_eq!(activation_code(&w, &[0.0, 0.0]).unwrap().to_string(), "00");
        assert!(on_region_boundary(&w, &[0.0, 3.0]).unwrap());
    }

    #[test]
    fn polytope_identity_examples() {
        let w = identity_net();
        let p = polytope_from_code(&w, &ActivationCode::parse("11").unwrap()).unwrap();
        assert_eq!(p.a_matrix, vec![vec![-1.0, 0.0], vec![0.0, -1.0]]);
        assert_eq!(p.b_vector, vec![0.0, 0.0]);
        let p = polytope_from_code(&w, &ActivationCode::parse("10").unwrap()).unwrap();
        assert_eq!(p.a_matrix, vec![vec![-1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(p.b_vector, vec![0.0, 0.0]);
        assert!(polytope_from_code(&w, &ActivationCode::parse("1").unwrap()).is_err());
    }

    #[test]
    fn linear_map_without_hidden_layers_is_the_layer() {
        let layer = Layer {
            weights: vec![vec![1.0, 2.0], vec![3.0, 4.0]],
            bias: vec![0.5, -0.5],
        };
        let w = ModelWeights::new(2, vec![layer.clone()]).unwrap();
        let map = linear_map_from_code(&w, &ActivationCode::default()).unwrap();
        assert_eq!(map.matrix, layer.weights);
        assert_eq!(map.offset, layer.bias);
    }

    #[test]
    fn all_ones_code_removes_relus() {
        let w = ModelWeights::new(
            2,
            vec![
                Layer {
                    weights: vec![vec![1.0, 2.0], vec![-1.0, 0.5]],
                    bias: vec![0.1, 0.2],
                },
                Layer {
                    weights: vec![vec![2.0, 1.0], vec![0.0, -3.0]],
                    bias: vec![1.0, -1.0],
                },
            ],
        )
        .unwrap();
        let map = linear_map_from_code(&w, &ActivationCode::all(true, 2)).unwrap();
        // W2 (W1 x + b1) + b2
        assert_eq!(map.matrix, vec![vec![1.0, 4.5], vec![3.0, -1.5]]);
        assert!((map.offset[0] - 1.4).abs() < 1e-15);
        assert!((map.offset[1] + 1.6).abs() < 1e-15);
    }

    #[test]
    fn reduce_poly_dim_hand_example() {
        let p = Polytope {
            a_matrix: vec![vec![1.0, 2.0], vec![-1.0, 3.0]],
            b_vector: vec![4.0, 5.0],
            dim: 2,
            source_code: ActivationCode::default(),
        };
        let spec = SensitiveSpec::new(vec![SensitiveFeature { index: 0, domain: vec![0.0, 1.0] }], 2).unwrap();
        let r = reduce_poly_dim(&p, &spec, &[1.0]).unwrap();
        assert_eq!(r.a_matrix, vec![vec![2.0], vec![3.0]]);
        assert_eq!(r.b_vector, vec![3.0, 6.0]);
        assert_eq!(r.dim, 1);
        let r0 = reduce_poly_dim(&p, &spec, &[0.0]).unwrap();
        assert_eq!(r0.a_matrix, vec![vec![2.0], vec![3.0]]);
        assert_eq!(r0.b_vector, p.b_vector);
        assert!(reduce_poly_dim(&p, &spec, &[]).is_err());
        let bad = SensitiveSpec { features: vec![SensitiveFeature { index: 4, domain: vec![0.0] }] };
        assert!(reduce_poly_dim(&p, &bad, &[0.0]).is_err());
    }

    #[test]
    fn projection_distance_examples() {
        let h = Halfspace { normal: vec![3.0, 4.0], offset: 10.0 };
        assert_eq!(projection_distance(&[0.0, 0.0], &h).unwrap(), 2.0);
        assert_eq!(projection_distance(&[2.0, 1.0], &h).unwrap(), 0.0);
        let zero = Halfspace { normal: vec![0.0, 0.0], offset: 1.0 };
        assert_eq!(projection_distance(&[0.0, 0.0], &zero), Err(Error::ZeroNormal));
        let foot = projection_foot(&[0.0, 0.0], &h).unwrap();
        assert!((foot[0] - 1.2).abs() < 1e-12 && (foot[1] - 1.6).abs() < 1e-12);
    }

    #[test]
    fn projection_lower_bounds_segment_distance() {
        // Facet {(t, 1) : t in [2, 3]} on the hyperplane y = 1.
        let h = Halfspace { normal: vec![0.0, 1.0], offset: 1.0 };
        let proj = projection_distance(&[0.0, 0.0], &h).unwrap();
        let n = 100_000;
        let sampled = (0..=n)
            .map(|k| 2.0 + k as f64 / n as f64)
            .map(|t| (t * t + 1.0).sqrt())
            .fold(f64::INFINITY, f64::min);
        assert_eq!(proj, 1.0);
        assert!((sampled - 5f64.sqrt()).abs() < 1e-12);
        assert!(proj <= sampled);
    }

    #[test]
    fn representative_point_examples() {
        let square = Polytope {
            a_matrix: vec![vec![-1.0, 0.0], vec![1.0, 0.0], vec![0.0, -1.0], vec![0.0, 1.0]],
            b_vector: vec![0.0, 1.0, 0.0, 1.0],
            dim: 2,
            source_code: ActivationCode::default(),
        };
        let c = representative_point(&square, 100.0).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-9 && (c[1] - 0.5).abs() < 1e-9, "{c:?}");

        let half = Polytope {
            a_matrix: vec![vec![-1.0, 0.0]],
            b_vector: vec![0.0],
            dim: 2,
            source_code: ActivationCode::default(),
        };
        let c = representative_point(&half, 1.0).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-9 && c[1].abs() < 1e-9, "{c:?}");
        assert!(half.contains_strictly(&c));

        let empty = Polytope {
            a_matrix: vec![vec![1.0], vec![-1.0]],
            b_vector: vec![0.0, -1.0],
            dim: 1,
            source_code: ActivationCode::default(),
        };
        assert_eq!(representative_point(&empty, 100.0), Err(Error::Infeasible));
    }

    #[test]
    fn sensitive_columns_of_zero_weight_do_not_affect_slices() {
        let w = ModelWeights::new(
            2,
            vec![
                Layer { weights: vec![vec![0.0, 1.0], vec![0.0, -2.0]], bias: vec![0.3, 0.1] },
                Layer { weights: vec![vec![1.0, 1.0], vec![-1.0, 0.5]], bias: vec![0.0, 0.0] },
            ],
        )
        .unwrap();
        let spec = SensitiveSpec::new(vec![SensitiveFeature { index: 0, domain: vec![-1.0, 2.0] }], 2).unwrap();
        let p = polytope_from_code(&w, &ActivationCode::parse("10").unwrap()).unwrap();
        let a = reduce_poly_dim(&p, &spec, &[-1.0]).unwrap();
        let b = reduce_poly_dim(&p, &spec, &[2.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn code_hamming_and_flip() {
        let c = ActivationCode::parse("0110").unwrap();
        assert_eq!(c.flipped(0).to_string(), "1110");
        assert_eq!(c.hamming(&c.flipped(2)), 1);
        assert_eq!(c.hamming(&c), 0);
        assert_eq!(ActivationCode::from_index(0b101, 4).to_string(), "1010");
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(json, "\"0110\"");
        assert_eq!(serde_json::from_str::<ActivationCode>(&json).unwrap(), c);
    }
}
