//! Sensitive features and their finite domains.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitiveFeature {
    pub index: usize,
    pub domain: Vec<f64>,
}

/// The sensitive coordinates of the input and the values each may take.
///
/// Distances used for certification ignore these coordinates entirely; the
/// remaining ("non-sensitive") coordinates keep their original order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SensitiveSpec {
    pub features: Vec<SensitiveFeature>,
}

impl SensitiveSpec {
    pub fn new(features: Vec<SensitiveFeature>, n_inputs: usize) -> Result<Self> {
        let spec = SensitiveSpec { features };
        spec.validate(n_inputs)?;
        Ok(spec)
    }

    pub fn validate(&self, n_inputs: usize) -> Result<()> {
        let mut seen = vec![false; n_inputs];
        for (k, f) in self.features.iter().enumerate() {
            if f.index >= n_inputs {
                return Err(Error::Spec(format!(
                    "features[{k}].index {} out of range for {n_inputs} inputs",
                    f.index
                )));
            }
            if std::mem::replace(&mut seen[f.index], true) {
                return Err(Error::Spec(format!("features[{k}].index {} repeated", f.index)));
            }
            if f.domain.is_empty() {
                return Err(Error::Spec(format!("features[{k}].domain is empty")));
            }
            if f.domain.iter().any(|v| !v.is_finite()) {
                return Err(Error::Spec(format!("features[{k}].domain has a non-finite value")));
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.features.len()
    }

    pub fn sensitive_indices(&self) -> Vec<usize> {
        self.features.iter().map(|f| f.index).collect()
    }

    pub fn is_sensitive(&self, i: usize) -> bool {
        self.features.iter().any(|f| f.index == i)
    }

    /// Input coordinates that are not sensitive, ascending.
    pub fn non_sensitive_indices(&self, n_inputs: usize) -> Vec<usize> {
        (0..n_inputs).filter(|&i| !self.is_sensitive(i)).collect()
    }

    /// Cartesian product of the domains, lexicographic in the listed order
    /// (the last feature varies fastest). An empty spec yields one empty tuple.
    pub fn enumerate_domain(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = vec![Vec::new()];
        for f in &self.features {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    f.domain.iter().map(move |v| {
                        let mut t = prefix.clone();
                        t.push(*v);
                        t
                    })
                })
                .collect();
        }
        out
    }

    pub fn check_tuple(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.k() {
            return Err(Error::Dimension {
                context: "sensitive value tuple",
                expected: self.k(),
                found: s.len(),
            });
        }
        Ok(())
    }

    /// Drops the sensitive coordinates of a full input point.
    pub fn project_out(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .filter(|(i, _)| !self.is_sensitive(*i))
            .map(|(_, v)| *v)
            .collect()
    }

    /// Rebuilds a full input point from non-sensitive coordinates and a
    /// sensitive value tuple.
    pub fn merge(&self, x_ns: &[f64], s: &[f64]) -> Vec<f64> {
        let n = x_ns.len() + self.k();
        let mut out = vec![0.0; n];
        let mut rest = x_ns.iter();
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = match self.features.iter().position(|f| f.index == i) {
                Some(k) => s[k],
                None => *rest.next().expect("x_ns has n - k entries"),
            };
        }
        out
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }
}
