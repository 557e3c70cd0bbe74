//! Best-first facet traversal and the fairness certificate built on it.
//!
//! For every assignment `s` of the sensitive features the input space is
//! sliced to the non-sensitive coordinates and the traversal starts at the
//! cell containing the query. Facets are pushed with their projection
//! distance (point to hyperplane), which never exceeds the true distance to
//! the facet, so the first boundary facet popped gives a lower bound on the
//! distance to any label change. The certificate is the minimum over `s`.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::path::Path;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    activation_code, decision_cell, facet_representative_point, on_region_boundary,
    projection_distance, projection_foot, ActivationCode, Cell, Halfspace, TightRow, TOLERANCE,
};
use crate::lp::Center;
use crate::model::ModelWeights;
use crate::spec::SensitiveSpec;

pub const BUNDLE_VERSION: u32 = 1;

/// Offset applied to the first non-sensitive coordinate when the query sits
/// exactly on a region boundary.
pub const TIE_PERTURBATION: f64 = 1e-12;
const MAX_PERTURBATION_STEPS: u32 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    /// Half-width of the box `[-B, B]^d` that bounds every region.
    pub box_bound: f64,
    /// Facets whose inscribed ball is smaller than this are treated as empty.
    pub min_facet_radius: f64,
    pub max_pops: usize,
    /// Worker threads for the per-assignment branches; 1 runs them inline.
    pub threads: usize,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            box_bound: 100.0,
            min_facet_radius: 1e-9,
            max_pops: 100_000,
            threads: 1,
        }
    }
}

/// Identity of a facet independent of which side discovered it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FacetKey {
    /// Shared by the two regions whose codes differ in one bit.
    Shared { low: ActivationCode, high: ActivationCode },
    /// Decision-boundary facet of one cell against class `class`.
    Boundary { cell: ActivationCode, class: usize },
}

impl FacetKey {
    pub fn of(code: &ActivationCode, tight: TightRow) -> FacetKey {
        match tight {
            TightRow::Neuron(i) => {
                let other = code.flipped(i);
                let (low, high) = if *code <= other {
                    (code.clone(), other)
                } else {
                    (other, code.clone())
                };
                FacetKey::Shared { low, high }
            }
            TightRow::Label(class) => FacetKey::Boundary {
                cell: code.clone(),
                class,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetRecord {
    pub key: FacetKey,
    pub owner: ActivationCode,
    pub tight_row: TightRow,
    /// Hyperplane in the sliced (non-sensitive) coordinates.
    pub hyperplane: Halfspace,
    pub distance: f64,
    pub is_boundary: bool,
    /// Chebyshev center of the facet within its hyperplane, sliced coordinates.
    pub representative: Vec<f64>,
    pub radius: f64,
    /// The projection of the query onto the hyperplane lies in the facet.
    pub foot_inside: bool,
    /// Pop that expanded the owner cell; `None` for the starting cell.
    pub pushed_by: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopRecord {
    /// Index into [`TraversalTrace::facets`].
    pub facet: usize,
    pub distance: f64,
    pub is_boundary: bool,
    /// Region entered through this facet, if it had not been seen before.
    pub neighbor: Option<ActivationCode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// A boundary facet was popped.
    Boundary,
    /// Every remaining facet is farther than the box; the bound is the box distance.
    BoxLimited,
    /// The query itself changes label under this assignment.
    LabelMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraversalTrace {
    pub s_value: Vec<f64>,
    pub start_code: ActivationCode,
    pub outcome: Outcome,
    pub epsilon_s: f64,
    pub box_distance: f64,
    pub facets: Vec<FacetRecord>,
    pub pops: Vec<PopRecord>,
    pub pop_count: usize,
}

impl TraversalTrace {
    pub fn monotone(&self) -> bool {
        self.pops.windows(2).all(|w| w[0].distance <= w[1].distance)
    }

    /// Every popped facet had its projection foot inside the facet.
    pub fn all_feet_inside(&self) -> bool {
        self.pops.iter().all(|p| self.facets[p.facet].foot_inside)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub coordinate: usize,
    pub delta: f64,
    pub steps: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateBundle {
    pub v: u32,
    pub query: Vec<f64>,
    pub label: usize,
    pub epsilon_lb: f64,
    pub epsilon_list: Vec<f64>,
    pub per_s: Vec<TraversalTrace>,
    pub perturbation: Option<Perturbation>,
    pub box_bound: f64,
}

impl CertificateBundle {
    /// The query actually certified, after any tie perturbation.
    pub fn certified_point(&self) -> Vec<f64> {
        let mut q = self.query.clone();
        if let Some(p) = &self.perturbation {
            q[p.coordinate] += p.delta * f64::from(p.steps);
        }
        q
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let b: CertificateBundle = serde_json::from_str(s)?;
        if b.v != BUNDLE_VERSION {
            return Err(Error::Schema(format!("unsupported certificate version {}", b.v)));
        }
        Ok(b)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string() + "\n")
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }
}

/// Min-heap entry ordered by `(distance, insertion_seq)`.
#[derive(Debug, Clone, Copy)]
pub struct FacetQueueEntry {
    pub facet: usize,
    pub distance: f64,
    pub insertion_seq: u64,
}

impl PartialEq for FacetQueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for FacetQueueEntry {}

impl PartialOrd for FacetQueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FacetQueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap.
        other
            .distance
            .total_cmp(&self.distance)
            .then(other.insertion_seq.cmp(&self.insertion_seq))
    }
}

/// Applies the tie rule: while any branch point has a hidden pre-activation
/// exactly at zero, nudge the first non-sensitive coordinate.
pub fn prepare_query(
    w: &ModelWeights,
    spec: &SensitiveSpec,
    x: &[f64],
) -> Result<(Vec<f64>, Option<Perturbation>)> {
    w.check_input(x)?;
    spec.validate(w.n_inputs)?;
    let Some(coordinate) = spec.non_sensitive_indices(w.n_inputs).first().copied() else {
        return Ok((x.to_vec(), None));
    };
    let domain = spec.enumerate_domain();
    let mut q = x.to_vec();
    let delta = TIE_PERTURBATION.max(x[coordinate].abs() * f64::EPSILON * 2.0);
    let mut steps = 0;
    loop {
        let ns = spec.project_out(&q);
        let mut tie = on_region_boundary(w, &q)?;
        for s in &domain {
            tie |= on_region_boundary(w, &spec.merge(&ns, s))?;
        }
        if !tie {
            break;
        }
        if steps == MAX_PERTURBATION_STEPS {
            debug!("query still on a region boundary after {steps} perturbations");
            break;
        }
        steps += 1;
        q[coordinate] = x[coordinate] + delta * f64::from(steps);
    }
    let record = (steps > 0).then_some(Perturbation {
        coordinate,
        delta,
        steps,
    });
    Ok((q, record))
}

struct Traversal<'a> {
    w: &'a ModelWeights,
    spec: &'a SensitiveSpec,
    s: &'a [f64],
    x_ns: &'a [f64],
    label: usize,
    opts: &'a CertifyOptions,
    seen_facets: HashSet<FacetKey>,
    facets: Vec<FacetRecord>,
    heap: BinaryHeap<FacetQueueEntry>,
    seq: u64,
}

impl Traversal<'_> {
    fn cell(&self, code: &ActivationCode) -> Result<Cell> {
        decision_cell(self.w, code, self.label)?.reduce(self.spec, self.s)
    }

    fn expand(&mut self, cell: &Cell, pushed_by: Option<usize>) -> Result<()> {
        let b = self.opts.box_bound;
        for (tight, h) in cell.rows() {
            if h.norm() == 0.0 {
                continue;
            }
            let key = FacetKey::of(cell.code(), tight);
            if !self.seen_facets.insert(key.clone()) {
                continue;
            }
            let (representative, radius) = match facet_representative_point(cell, tight, b)? {
                Center::Feasible { point, radius } if radius >= self.opts.min_facet_radius => (point, radius),
                _ => continue,
            };
            let distance = projection_distance(self.x_ns, &h)?;
            let foot = projection_foot(self.x_ns, &h)?;
            let foot_inside = foot.iter().all(|v| v.abs() <= b + TOLERANCE)
                && cell
                    .rows()
                    .iter()
                    .filter(|(t, _)| *t != tight)
                    .all(|(_, o)| o.slack(&foot) >= -TOLERANCE);
            let idx = self.facets.len();
            self.facets.push(FacetRecord {
                key,
                owner: cell.code().clone(),
                tight_row: tight,
                hyperplane: h,
                distance,
                is_boundary: matches!(tight, TightRow::Label(_)),
                representative,
                radius,
                foot_inside,
                pushed_by,
            });
            self.heap.push(FacetQueueEntry {
                facet: idx,
                distance,
                insertion_seq: self.seq,
            });
            self.seq += 1;
        }
        Ok(())
    }
}

/// Lower bound on the distance from `x_ns` to a label change, with the
/// sensitive features fixed at `s`. `label` is the label being certified.
pub fn geocert_lb(
    w: &ModelWeights,
    spec: &SensitiveSpec,
    s: &[f64],
    x_ns: &[f64],
    label: usize,
    opts: &CertifyOptions,
) -> Result<TraversalTrace> {
    spec.check_tuple(s)?;
    if x_ns.len() + spec.k() != w.n_inputs {
        return Err(Error::Dimension {
            context: "non-sensitive point",
            expected: w.n_inputs - spec.k(),
            found: x_ns.len(),
        });
    }
    let full = spec.merge(x_ns, s);
    let start_code = activation_code(w, &full)?;
    let box_distance = x_ns
        .iter()
        .map(|v| opts.box_bound - v.abs())
        .fold(opts.box_bound, f64::min)
        .max(0.0);

    let mut t = Traversal {
        w,
        spec,
        s,
        x_ns,
        label,
        opts,
        seen_facets: HashSet::new(),
        facets: Vec::new(),
        heap: BinaryHeap::new(),
        seq: 0,
    };
    let start = t.cell(&start_code)?;
    let mismatch = start.label_rows.iter().any(|(_, h)| h.slack(x_ns) < 0.0);
    if mismatch {
        return Ok(TraversalTrace {
            s_value: s.to_vec(),
            start_code,
            outcome: Outcome::LabelMismatch,
            epsilon_s: 0.0,
            box_distance,
            facets: Vec::new(),
            pops: Vec::new(),
            pop_count: 0,
        });
    }

    let mut seen_cells = HashSet::from([start_code.clone()]);
    t.expand(&start, None)?;
    let mut pops: Vec<PopRecord> = Vec::new();
    let (outcome, epsilon_s) = loop {
        let Some(top) = t.heap.peek().copied() else {
            break (Outcome::BoxLimited, box_distance);
        };
        if top.distance >= box_distance {
            break (Outcome::BoxLimited, box_distance);
        }
        t.heap.pop();
        if pops.len() == opts.max_pops {
            return Err(Error::TraversalLimit(opts.max_pops));
        }
        let record = &t.facets[top.facet];
        if record.is_boundary {
            pops.push(PopRecord {
                facet: top.facet,
                distance: top.distance,
                is_boundary: true,
                neighbor: None,
            });
            break (Outcome::Boundary, top.distance);
        }
        let TightRow::Neuron(i) = record.tight_row else {
            unreachable!("non-boundary facets lie on neuron rows")
        };
        let next = record.owner.flipped(i);
        let neighbor = if seen_cells.insert(next.clone()) {
            let cell = t.cell(&next)?;
            t.expand(&cell, Some(pops.len()))?;
            Some(next)
        } else {
            None
        };
        pops.push(PopRecord {
            facet: top.facet,
            distance: top.distance,
            is_boundary: false,
            neighbor,
        });
    };

    let trace = TraversalTrace {
        s_value: s.to_vec(),
        start_code,
        outcome,
        epsilon_s,
        box_distance,
        pop_count: pops.len(),
        facets: t.facets,
        pops,
    };
    if !trace.monotone() {
        debug!("pop distances not monotone for s = {:?}", trace.s_value);
    }
    Ok(trace)
}

/// Certifies local individual fairness of `x`: every point whose
/// non-sensitive part lies within `epsilon_lb` of `x`'s, with the sensitive
/// features set to any value in their domain, gets the label of `x`.
pub fn certify_fairness(
    w: &ModelWeights,
    spec: &SensitiveSpec,
    x: &[f64],
    opts: &CertifyOptions,
) -> Result<CertificateBundle> {
    let (q, perturbation) = prepare_query(w, spec, x)?;
    let label = w.predict(&q)?;
    let x_ns = spec.project_out(&q);
    let domain = spec.enumerate_domain();
    let run = |s: &Vec<f64>| geocert_lb(w, spec, s, &x_ns, label, opts);
    let per_s: Vec<TraversalTrace> = if opts.threads > 1 && domain.len() > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads)
            .build()
            .map_err(|e| Error::Io(e.to_string()))?;
        pool.install(|| domain.par_iter().map(run).collect::<Result<_>>())?
    } else {
        domain.iter().map(run).collect::<Result<_>>()?
    };
    let epsilon_list: Vec<f64> = per_s.iter().map(|t| t.epsilon_s).collect();
    let epsilon_lb = epsilon_list.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(CertificateBundle {
        v: BUNDLE_VERSION,
        query: x.to_vec(),
        label,
        epsilon_lb,
        epsilon_list,
        per_s,
        perturbation,
        box_bound: opts.box_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Layer;
    use crate::spec::SensitiveFeature;

    fn linear(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> ModelWeights {
        let n = weights[0].len();
        ModelWeights::new(n, vec![Layer { weights, bias }]).unwrap()
    }

    #[test]
    fn queue_orders_by_distance_then_sequence() {
        let mut heap = BinaryHeap::new();
        for (facet, distance, seq) in [(0, 2.0, 0), (1, 1.0, 1), (2, 1.0, 2), (3, 0.5, 3)] {
            heap.push(FacetQueueEntry { facet, distance, insertion_seq: seq });
        }
        let order: Vec<usize> = std::iter::from_fn(|| heap.pop().map(|e| e.facet)).collect();
        assert_eq!(order, vec![3, 1, 2, 0]);
    }

    #[test]
    fn linear_model_has_closed_form_bound() {
        let w = linear(vec![vec![1.0, 2.0, 0.5], vec![-1.0, 0.5, 1.5]], vec![0.2, -0.1]);
        let spec = SensitiveSpec::default();
        let x = [0.4, 0.3, -0.2];
        let cert = certify_fairness(&w, &spec, &x, &CertifyOptions::default()).unwrap();
        let dw = [-2.0, -1.5, 1.0];
        let dc = -0.3;
        let expect = (dc + dw.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>()).abs()
            / dw.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((cert.epsilon_lb - expect).abs() < 1e-12, "{} vs {expect}", cert.epsilon_lb);
        assert_eq!(cert.per_s[0].outcome, Outcome::Boundary);
        assert_eq!(cert.per_s[0].pop_count, 1);
    }

    #[test]
    fn unused_sensitive_feature_gives_equal_branches() {
        let w = ModelWeights::new(
            3,
            vec![
                Layer {
                    weights: vec![vec![0.0, 1.0, -0.5], vec![0.0, 0.3, 1.0]],
                    bias: vec![0.1, -0.2],
                },
                Layer {
                    weights: vec![vec![1.0, -1.0], vec![-0.5, 1.0]],
                    bias: vec![0.05, 0.0],
                },
            ],
        )
        .unwrap();
        let spec = SensitiveSpec::new(vec![SensitiveFeature { index: 0, domain: vec![-1.0, 0.0, 1.0] }], 3).unwrap();
        let cert = certify_fairness(&w, &spec, &[0.5, 0.2, 0.7], &CertifyOptions::default()).unwrap();
        assert_eq!(cert.epsilon_list.len(), 3);
        assert!(cert.epsilon_list.iter().all(|e| *e == cert.epsilon_list[0]));
        assert_eq!(cert.epsilon_lb, cert.epsilon_list[0]);
    }

    #[test]
    fn label_mismatch_branch_certifies_zero() {
        // Label is decided by the sensitive coordinate alone.
        let w = linear(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![0.0, 0.0]);
        let spec = SensitiveSpec::new(vec![SensitiveFeature { index: 0, domain: vec![-1.0, 1.0] }], 2).unwrap();
        let cert = certify_fairness(&w, &spec, &[1.0, 0.0], &CertifyOptions::default()).unwrap();
        assert_eq!(cert.per_s[0].outcome, Outcome::LabelMismatch);
        assert_eq!(cert.epsilon_lb, 0.0);
    }

    #[test]
    fn constant_model_is_box_limited() {
        let w = linear(vec![vec![0.0, 0.0], vec![0.0, 0.0]], vec![1.0, 0.0]);
        let opts = CertifyOptions { box_bound: 3.0, ..Default::default() };
        let cert = certify_fairness(&w, &SensitiveSpec::default(), &[1.0, -0.5], &opts).unwrap();
        assert_eq!(cert.per_s[0].outcome, Outcome::BoxLimited);
        assert_eq!(cert.epsilon_lb, 2.0);
    }

    #[test]
    fn symmetric_ties_give_the_same_value() {
        // |x| - 1 decides the label; the query at 0 is equidistant from both sides.
        let w = ModelWeights::new(
            1,
            vec![
                Layer { weights: vec![vec![1.0], vec![-1.0]], bias: vec![0.0, 0.0] },
                Layer { weights: vec![vec![-1.0, -1.0], vec![0.0, 0.0]], bias: vec![1.0, 0.0] },
            ],
        )
        .unwrap();
        let cert = certify_fairness(&w, &SensitiveSpec::default(), &[0.0], &CertifyOptions::default()).unwrap();
        assert!(cert.perturbation.is_some());
        assert!((cert.epsilon_lb - 1.0).abs() < 1e-9, "{}", cert.epsilon_lb);
    }

    #[test]
    fn tie_perturbation_is_recorded_and_reproducible() {
        let w = ModelWeights::new(
            2,
            vec![
                Layer { weights: vec![vec![1.0, 0.0], vec![0.0, 1.0]], bias: vec![0.0, 0.0] },
                Layer { weights: vec![vec![1.0, 1.0], vec![-1.0, 0.0]], bias: vec![0.0, 0.3] },
            ],
        )
        .unwrap();
        let (q, p) = prepare_query(&w, &SensitiveSpec::default(), &[0.0, 1.0]).unwrap();
        let p = p.unwrap();
        assert_eq!(p.coordinate, 0);
        assert_eq!(q[0], TIE_PERTURBATION);
        let cert = certify_fairness(&w, &SensitiveSpec::default(), &[0.0, 1.0], &CertifyOptions::default()).unwrap();
        assert_eq!(cert.certified_point(), q);
    }
}
