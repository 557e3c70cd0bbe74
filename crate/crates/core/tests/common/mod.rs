#![allow(dead_code)]

use std::path::PathBuf;

use faircert_core::{ModelWeights, SensitiveSpec};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn model(name: &str) -> ModelWeights {
    ModelWeights::load(fixture(name)).unwrap()
}

pub fn spec(name: &str) -> SensitiveSpec {
    SensitiveSpec::load(fixture(name)).unwrap()
}

#[derive(Deserialize)]
struct Queries {
    queries: Vec<Vec<f64>>,
}

pub fn queries(name: &str) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(fixture(name)).unwrap();
    serde_json::from_str::<Queries>(&text).unwrap().queries
}

/// Uniform sample from the closed ball of radius `r` around `center`.
pub fn sample_ball<R: Rng>(rng: &mut R, center: &[f64], r: f64) -> Vec<f64> {
    let d = center.len();
    let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let norm = dir.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
    let radius = r * rng.gen::<f64>().powf(1.0 / d as f64);
    center
        .iter()
        .zip(&dir)
        .map(|(c, u)| c + radius * u / norm)
        .collect()
}
