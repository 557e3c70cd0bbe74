//! Fully-connected ReLU network weights and the JSON model schema.
//!
//! ```json
//! { "n_inputs": 2, "n_classes": 2,
//!   "layers": [ { "weights": [[1.0, 0.0], [0.0, 1.0]], "bias": [0.0, 0.0] } ] }
//! ```
//!
//! Weights are row-major (`weights[out][in]`). ReLU is applied after every
//! layer except the last one, whose outputs are the logits.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn out_dim(&self) -> usize {
        self.bias.len()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    /// `W v + b`
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| dot(row, v) + b)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub n_inputs: usize,
    pub n_classes: usize,
    pub layers: Vec<Layer>,
}

impl ModelWeights {
    /// Builds a model and checks the layer chain.
    pub fn new(n_inputs: usize, layers: Vec<Layer>) -> Result<Self> {
        let n_classes = layers.last().map_or(0, Layer::out_dim);
        let model = ModelWeights {
            n_inputs,
            n_classes,
            layers,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Schema("layers: at least one layer is required".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Schema(format!(
                "n_classes: expected at least 2, found {}",
                self.n_classes
            )));
        }
        let mut fan_in = self.n_inputs;
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.weights.len() != layer.bias.len() {
                return Err(Error::Schema(format!(
                    "layers[{l}]: weights has {} rows but bias has {} entries",
                    layer.weights.len(),
                    layer.bias.len()
                )));
            }
            if layer.bias.is_empty() {
                return Err(Error::Schema(format!("layers[{l}]: empty layer")));
            }
            for (r, row) in layer.weights.iter().enumerate() {
                if row.len() != fan_in {
                    return Err(Error::Schema(format!(
                        "layers[{l}].weights[{r}]: expected {fan_in} entries, found {}",
                        row.len()
                    )));
                }
                if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Schema(format!(
                        "layers[{l}].weights[{r}][{c}]: non-finite value"
                    )));
                }
            }
            if let Some(c) = layer.bias.iter().position(|v| !v.is_finite()) {
                return Err(Error::Schema(format!("layers[{l}].bias[{c}]: non-finite value")));
            }
            fan_in = layer.out_dim();
        }
        if fan_in != self.n_classes {
            return Err(Error::Schema(format!(
                "n_classes: declared {} but final layer has {fan_in} outputs",
                self.n_classes
            )));
        }
        Ok(())
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.hidden_layers().iter().map(Layer::out_dim).collect()
    }

    /// Total number of hidden neurons (length of an activation code).
    pub fn n_hidden(&self) -> usize {
        self.hidden_layers().iter().map(Layer::out_dim).sum()
    }

    pub fn hidden_layers(&self) -> &[Layer] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn output_layer(&self) -> &Layer {
        self.layers.last().expect("validated model has layers")
    }

    pub fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_inputs {
            return Err(Error::Dimension {
                context: "input point",
                expected: self.n_inputs,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input point"));
        }
        Ok(())
    }

    /// Hidden pre-activations in layer-major order, followed by the logits.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(x)?;
        let mut pre = Vec::with_capacity(self.n_hidden());
        let mut h = x.to_vec();
        for layer in self.hidden_layers() {
            let z = layer.apply(&h);
            h = z.iter().map(|v| v.max(0.0)).collect();
            pre.extend(z);
        }
        Ok((pre, self.output_layer().apply(&h)))
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.1)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let model: ModelWeights = serde_json::from_str(s)?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string() + "\n")
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
