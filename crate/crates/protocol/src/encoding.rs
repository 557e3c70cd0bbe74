//! Fixed-point encoding of real values and the quantized model the protocol
//! commits to.
//!
//! Reals are rounded to the grid `2^-scale_bits` (ties to even) and stored as
//! signed integers; leaves of the commitment carry them as elements of the
//! prime field `Z_p` with `p = 2^61 - 1`, negatives wrapped to `p - |v|`.

use faircert_core::{Layer, ModelWeights, SensitiveFeature, SensitiveSpec};
use serde::{Deserialize, Serialize};

use crate::error::{ProtocolError, Result};

pub const DEFAULT_SCALE_BITS: u32 = 16;
pub const MERSENNE_61: u64 = (1 << 61) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointEncoding {
    pub scale_bits: u32,
    #[serde(with = "u64_string")]
    pub modulus: u64,
}

impl Default for FixedPointEncoding {
    fn default() -> Self {
        FixedPointEncoding {
            scale_bits: DEFAULT_SCALE_BITS,
            modulus: MERSENNE_61,
        }
    }
}

impl FixedPointEncoding {
    pub fn scale(&self) -> f64 {
        (self.scale_bits as f64).exp2()
    }

    /// Largest magnitude of a signed grid integer that still has a unique field image.
    pub fn max_abs(&self) -> i64 {
        ((self.modulus - 1) / 2) as i64
    }

    pub fn quantize(&self, x: f64) -> Result<i64> {
        let limit_bits = 64 - self.modulus.leading_zeros() - 1 - self.scale_bits;
        let v = (x * self.scale()).round_ties_even();
        // max_abs + 1 is a power of two, so the bound is exact in f64.
        if !v.is_finite() || v.abs() >= (self.max_abs() as u64 + 1) as f64 {
            return Err(ProtocolError::EncodingOverflow { value: x, limit_bits });
        }
        Ok(v as i64)
    }

    pub fn dequantize(&self, q: i64) -> f64 {
        q as f64 / self.scale()
    }

    pub fn to_field(&self, q: i64) -> u64 {
        if q >= 0 {
            q as u64 % self.modulus
        } else {
            self.modulus - (q.unsigned_abs() % self.modulus)
        }
    }

    pub fn from_field(&self, f: u64) -> i64 {
        if f > self.modulus / 2 {
            -((self.modulus - f) as i64)
        } else {
            f as i64
        }
    }

    pub fn encode(&self, x: f64) -> Result<u64> {
        Ok(self.to_field(self.quantize(x)?))
    }

    pub fn decode(&self, f: u64) -> f64 {
        self.dequantize(self.from_field(f))
    }

    pub fn quantize_point(&self, x: &[f64]) -> Result<Vec<i64>> {
        x.iter().map(|v| self.quantize(*v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QLayer {
    pub weights: Vec<Vec<i64>>,
    pub bias: Vec<i64>,
}

/// A network whose every weight and bias lies on the fixed-point grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizedModel {
    pub n_inputs: usize,
    pub n_classes: usize,
    pub layers: Vec<QLayer>,
}

impl QuantizedModel {
    pub fn from_model(w: &ModelWeights, enc: &FixedPointEncoding) -> Result<Self> {
        w.validate()?;
        let layers = w
            .layers
            .iter()
            .map(|l| {
                Ok(QLayer {
                    weights: l
                        .weights
                        .iter()
                        .map(|row| enc.quantize_point(row))
                        .collect::<Result<_>>()?,
                    bias: enc.quantize_point(&l.bias)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(QuantizedModel {
            n_inputs: w.n_inputs,
            n_classes: w.n_classes,
            layers,
        })
    }

    /// The real-valued network this grid model denotes (exact in f64).
    pub fn to_model(&self, enc: &FixedPointEncoding) -> ModelWeights {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                weights: l
                    .weights
                    .iter()
                    .map(|row| row.iter().map(|v| enc.dequantize(*v)).collect())
                    .collect(),
                bias: l.bias.iter().map(|v| enc.dequantize(*v)).collect(),
            })
            .collect();
        ModelWeights {
            n_inputs: self.n_inputs,
            n_classes: self.n_classes,
            layers,
        }
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.bias.len()).collect()
    }

    pub fn n_hidden(&self) -> usize {
        self.hidden_sizes().iter().sum()
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.n_inputs)
            .chain(self.layers.iter().map(|l| l.bias.len()))
            .collect()
    }

    /// Number of weight and bias entries.
    pub fn n_entries(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.bias.len() * (l.weights.first().map_or(0, Vec::len) + 1))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QFeature {
    pub index: usize,
    pub domain: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct QuantizedSpec {
    pub features: Vec<QFeature>,
}

impl QuantizedSpec {
    pub fn from_spec(spec: &SensitiveSpec, enc: &FixedPointEncoding) -> Result<Self> {
        Ok(QuantizedSpec {
            features: spec
                .features
                .iter()
                .map(|f| {
                    Ok(QFeature {
                        index: f.index,
                        domain: enc.quantize_point(&f.domain)?,
                    })
                })
                .collect::<Result<_>>()?,
        })
    }

    pub fn to_spec(&self, enc: &FixedPointEncoding) -> SensitiveSpec {
        SensitiveSpec {
            features: self
                .features
                .iter()
                .map(|f| SensitiveFeature {
                    index: f.index,
                    domain: f.domain.iter().map(|v| enc.dequantize(*v)).collect(),
                })
                .collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.features.len()
    }

    pub fn is_sensitive(&self, i: usize) -> bool {
        self.features.iter().any(|f| f.index == i)
    }

    /// Same order as [`SensitiveSpec::enumerate_domain`].
    pub fn enumerate_domain(&self) -> Vec<Vec<i64>> {
        let mut out: Vec<Vec<i64>> = vec![Vec::new()];
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

    pub fn project_out<T: Clone>(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .enumerate()
            .filter(|(i, _)| !self.is_sensitive(*i))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn merge<T: Clone>(&self, x_ns: &[T], s: &[T]) -> Vec<T> {
        let n = x_ns.len() + self.k();
        let mut rest = x_ns.iter();
        (0..n)
            .map(|i| match self.features.iter().position(|f| f.index == i) {
                Some(k) => s[k].clone(),
                None => rest.next().expect("x_ns has n - k entries").clone(),
            })
            .collect()
    }

    pub fn first_non_sensitive(&self, n_inputs: usize) -> Option<usize> {
        (0..n_inputs).find(|i| !self.is_sensitive(*i))
    }
}

pub(crate) mod u64_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}
