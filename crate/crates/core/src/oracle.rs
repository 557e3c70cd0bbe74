//! Exhaustive reference for small networks.
//!
//! Enumerates every activation code, and for each nonempty cell computes the
//! exact Euclidean distance from the query to each of its boundary facets by
//! solving the projection QP with an active-set method. Exponential in the
//! number of hidden neurons; meant for checking the traversal, not for use.

use nalgebra::{DMatrix, DVector};

use crate::certifier::{prepare_query, CertifyOptions};
use crate::error::{Error, Result};
use crate::geometry::{activation_code, decision_cell, facet_representative_point, ActivationCode, Halfspace, TightRow};
use crate::lp::{chebyshev_center, Center};
use crate::model::ModelWeights;
use crate::spec::SensitiveSpec;

pub const MAX_ORACLE_HIDDEN: usize = 12;
const QP_TOL: f64 = 1e-10;
const QP_MAX_ITER: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleBranch {
    pub s_value: Vec<f64>,
    /// Exact distance to the nearest boundary point inside the box; infinite if none.
    pub exact: f64,
    /// Smallest point-to-hyperplane distance over all nonempty boundary facets.
    pub min_projection: f64,
    pub label_mismatch: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub label: usize,
    pub epsilon: f64,
    pub per_s: Vec<OracleBranch>,
}

/// Codes whose region, sliced at `s`, contains a ball of radius at least
/// `min_radius` inside the box.
pub fn feasible_codes(
    w: &ModelWeights,
    spec: &SensitiveSpec,
    s: &[f64],
    box_bound: f64,
    min_radius: f64,
) -> Result<Vec<ActivationCode>> {
    let h = w.n_hidden();
    if h > MAX_ORACLE_HIDDEN {
        return Err(Error::TooLarge { found: h, limit: MAX_ORACLE_HIDDEN });
    }
    let mut out = Vec::new();
    for idx in 0..(1u64 << h) {
        let code = ActivationCode::from_index(idx, h);
        let cell = decision_cell(w, &code, 0)?.reduce(spec, s)?;
        let rows: Vec<Halfspace> = cell.polytope.rows().collect();
        if chebyshev_center(&rows, None, cell.dim(), box_bound)?.is_solid(min_radius) {
            out.push(code);
        }
    }
    Ok(out)
}

pub fn exact_epsilon_oracle(
    w: &ModelWeights,
    spec: &SensitiveSpec,
    x: &[f64],
    opts: &CertifyOptions,
) -> Result<OracleResult> {
    let h = w.n_hidden();
    if h > MAX_ORACLE_HIDDEN {
        return Err(Error::TooLarge { found: h, limit: MAX_ORACLE_HIDDEN });
    }
    let (q, _) = prepare_query(w, spec, x)?;
    let label = w.predict(&q)?;
    let x_ns = spec.project_out(&q);
    let mut per_s = Vec::new();
    for s in spec.enumerate_domain() {
        per_s.push(branch(w, spec, &s, &x_ns, label, opts)?);
    }
    let epsilon = per_s.iter().map(|b| b.exact).fold(f64::INFINITY, f64::min);
    Ok(OracleResult { label, epsilon, per_s })
}

fn branch(
    w: &ModelWeights,
    spec: &SensitiveSpec,
    s: &[f64],
    x_ns: &[f64],
    label: usize,
    opts: &CertifyOptions,
) -> Result<OracleBranch> {
    let b = opts.box_bound;
    let start = activation_code(w, &spec.merge(x_ns, s))?;
    let start_cell = decision_cell(w, &start, label)?.reduce(spec, s)?;
    if start_cell.label_rows.iter().any(|(_, h)| h.slack(x_ns) < 0.0) {
        return Ok(OracleBranch {
            s_value: s.to_vec(),
            exact: 0.0,
            min_projection: 0.0,
            label_mismatch: true,
        });
    }
    let box_rows: Vec<Halfspace> = (0..x_ns.len())
        .flat_map(|k| {
            [1.0, -1.0].map(|sign| {
                let mut normal = vec![0.0; x_ns.len()];
                normal[k] = sign;
                Halfspace { normal, offset: b }
            })
        })
        .collect();
    let mut exact = f64::INFINITY;
    let mut min_projection = f64::INFINITY;
    let n_codes = 1u64 << w.n_hidden();
    for idx in 0..n_codes {
        let code = ActivationCode::from_index(idx, w.n_hidden());
        let cell = decision_cell(w, &code, label)?.reduce(spec, s)?;
        let region: Vec<Halfspace> = cell.polytope.rows().collect();
        if !chebyshev_center(&region, None, cell.dim(), b)?.is_solid(opts.min_facet_radius) {
            continue;
        }
        for (j, hj) in &cell.label_rows {
            let norm = hj.norm();
            if norm == 0.0 {
                continue;
            }
            let start = match facet_representative_point(&cell, TightRow::Label(*j), b)? {
                Center::Feasible { point, radius } if radius >= opts.min_facet_radius => point,
                _ => continue,
            };
            min_projection = min_projection.min(hj.slack(x_ns).abs() / norm);
            let mut ineq: Vec<Halfspace> = cell
                .rows()
                .into_iter()
                .filter(|(t, _)| *t != TightRow::Label(*j))
                .map(|(_, h)| h)
                .filter(|h| h.norm() > 0.0)
                .collect();
            ineq.extend(box_rows.iter().cloned());
            let y = project_onto_facet(x_ns, hj, &ineq, start);
            let d = y.iter().zip(x_ns).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            exact = exact.min(d);
        }
    }
    Ok(OracleBranch {
        s_value: s.to_vec(),
        exact,
        min_projection,
        label_mismatch: false,
    })
}

/// Nearest point to `x` on `{y | eq.normal . y = eq.offset, ineq}` by a
/// primal active-set method started from the feasible point `start`.
pub fn project_onto_facet(x: &[f64], eq: &Halfspace, ineq: &[Halfspace], start: Vec<f64>) -> Vec<f64> {
    let d = x.len();
    let xv = DVector::from_column_slice(x);
    let mut y = DVector::from_vec(start);
    let mut working: Vec<usize> = Vec::new();

    for _ in 0..QP_MAX_ITER {
        // Minimize ||z - x|| subject to the equality and the working set as equalities.
        let mut rows: Vec<&Halfspace> = vec![eq];
        rows.extend(working.iter().map(|&i| &ineq[i]));
        let c = DMatrix::from_fn(rows.len(), d, |r, k| rows[r].normal[k]);
        let rhs = DVector::from_fn(rows.len(), |r, _| rows[r].offset);
        let gram = &c * c.transpose();
        let pinv = gram
            .clone()
            .pseudo_inverse(QP_TOL)
            .expect("pseudo-inverse with nonnegative epsilon");
        let lambda = &pinv * (&c * &xv - &rhs);
        let target = &xv - c.transpose() * &lambda;
        let step = &target - &y;

        if step.norm() <= QP_TOL * (1.0 + y.norm()) {
            // Stationary on the working set (y = x - C^T lambda); an inequality
            // with a negative multiplier is pulling the wrong way, release it.
            let worst = (1..rows.len())
                .map(|r| (r, lambda[r]))
                .filter(|(_, l)| *l < -QP_TOL)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match worst {
                Some((r, _)) => {
                    working.remove(r - 1);
                    continue;
                }
                None => return y.iter().copied().collect(),
            }
        }

        // Longest feasible step toward the target.
        let mut alpha = 1.0;
        let mut blocking = None;
        for (i, h) in ineq.iter().enumerate() {
            if working.contains(&i) {
                continue;
            }
            let a = DVector::from_column_slice(&h.normal);
            let rate = a.dot(&step);
            if rate > QP_TOL {
                let room = (h.offset - a.dot(&y)).max(0.0);
                let t = room / rate;
                if t < alpha {
                    alpha = t;
                    blocking = Some(i);
                }
            }
        }
        y += step * alpha;
        if let Some(i) = blocking {
            working.push(i);
        }
    }
    y.iter().copied().collect()
}
