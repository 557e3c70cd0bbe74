//! Chebyshev centers (largest inscribed balls) by linear programming.
//!
//! The simplex solver itself is `minilp`; this module only builds the
//! programs. Centers are made unique by a second pass that keeps the optimal
//! radius and minimizes the l1 norm of the center.

use minilp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem, Variable};

use crate::error::{Error, Result};
use crate::geometry::Halfspace;
use crate::model::dot;

/// Radius the tie-breaking pass may give up, relative to `1 + r*`.
const RADIUS_SLACK: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq)]
pub enum Center {
    Feasible { point: Vec<f64>, radius: f64 },
    Infeasible,
}

impl Center {
    pub fn radius(&self) -> Option<f64> {
        match self {
            Center::Feasible { radius, .. } => Some(*radius),
            Center::Infeasible => None,
        }
    }

    /// Feasible with an inscribed ball of at least `min_radius`.
    pub fn is_solid(&self, min_radius: f64) -> bool {
        self.radius().is_some_and(|r| r >= min_radius)
    }
}

struct Row {
    coeffs: Vec<f64>,
    radius_coeff: f64,
    rhs: f64,
}

/// Center of `{x | rows} ∩ [-box_bound, box_bound]^dim`, optionally restricted
/// to the hyperplane `equality.normal . x = equality.offset`. With an equality
/// the ball is measured inside that hyperplane.
pub fn chebyshev_center(
    rows: &[Halfspace],
    equality: Option<&Halfspace>,
    dim: usize,
    box_bound: f64,
) -> Result<Center> {
    let unit_eq = match equality {
        Some(h) => {
            let n = h.norm();
            if n == 0.0 {
                return Err(Error::ZeroNormal);
            }
            Some(Halfspace {
                normal: h.normal.iter().map(|v| v / n).collect(),
                offset: h.offset / n,
            })
        }
        None => None,
    };
    // Norm of a direction after removing its component along the equality normal.
    let in_plane_norm = |a: &[f64]| -> f64 {
        match &unit_eq {
            Some(e) => {
                let along = dot(a, &e.normal);
                let sq: f64 = a.iter().zip(&e.normal).map(|(ai, ei)| (ai - along * ei).powi(2)).sum();
                sq.max(0.0).sqrt()
            }
            None => a.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    };

    let mut prepared = Vec::with_capacity(rows.len() + 2 * dim);
    for h in rows {
        if h.normal.len() != dim {
            return Err(Error::Dimension {
                context: "LP row",
                expected: dim,
                found: h.normal.len(),
            });
        }
        let n = h.norm();
        if n == 0.0 {
            if h.offset < 0.0 {
                return Ok(Center::Infeasible);
            }
            continue;
        }
        let coeffs: Vec<f64> = h.normal.iter().map(|v| v / n).collect();
        prepared.push(Row {
            radius_coeff: in_plane_norm(&coeffs),
            coeffs,
            rhs: h.offset / n,
        });
    }
    for k in 0..dim {
        for sign in [1.0, -1.0] {
            let mut coeffs = vec![0.0; dim];
            coeffs[k] = sign;
            prepared.push(Row {
                radius_coeff: in_plane_norm(&coeffs),
                coeffs,
                rhs: box_bound,
            });
        }
    }

    let build = |direction, radius_obj: f64, min_radius: f64| {
        let mut p = Problem::new(direction);
        let r = p.add_var(radius_obj, (min_radius, 2.0 * box_bound));
        let xs: Vec<Variable> = (0..dim).map(|_| p.add_var(0.0, (-box_bound, box_bound))).collect();
        for row in &prepared {
            let mut e = LinearExpr::empty();
            for (v, c) in xs.iter().zip(&row.coeffs) {
                if *c != 0.0 {
                    e.add(*v, *c);
                }
            }
            if row.radius_coeff != 0.0 {
                e.add(r, row.radius_coeff);
            }
            p.add_constraint(e, ComparisonOp::Le, row.rhs);
        }
        if let Some(eq) = &unit_eq {
            let mut e = LinearExpr::empty();
            for (v, c) in xs.iter().zip(&eq.normal) {
                if *c != 0.0 {
                    e.add(*v, *c);
                }
            }
            p.add_constraint(e, ComparisonOp::Eq, eq.offset);
        }
        (p, r, xs)
    };

    let (stage1, r, _) = build(OptimizationDirection::Maximize, 1.0, 0.0);
    let best = match stage1.solve() {
        Ok(sol) => *sol.var_value(r),
        Err(minilp::Error::Infeasible) => return Ok(Center::Infeasible),
        Err(e) => return Err(Error::Lp(e.to_string())),
    };

    let (mut stage2, r2, xs) = build(OptimizationDirection::Minimize, 0.0, (best - RADIUS_SLACK * (1.0 + best)).max(0.0));
    let ts: Vec<Variable> = (0..dim).map(|_| stage2.add_var(1.0, (0.0, f64::INFINITY))).collect();
    for (x, t) in xs.iter().zip(&ts) {
        stage2.add_constraint([(*t, 1.0), (*x, -1.0)], ComparisonOp::Ge, 0.0);
        stage2.add_constraint([(*t, 1.0), (*x, 1.0)], ComparisonOp::Ge, 0.0);
    }
    match stage2.solve() {
        Ok(sol) => Ok(Center::Feasible {
            point: xs.iter().map(|v| *sol.var_value(*v)).collect(),
            radius: sol.var_value(r2).min(best),
        }),
        // The first pass found this radius; fall back to an unpolished solve.
        Err(_) => {
            let (stage1, r, xs) = build(OptimizationDirection::Maximize, 1.0, 0.0);
            let sol = stage1.solve().map_err(|e| Error::Lp(e.to_string()))?;
            Ok(Center::Feasible {
                point: xs.iter().map(|v| *sol.var_value(*v)).collect(),
                radius: *sol.var_value(r),
            })
        }
    }
}
