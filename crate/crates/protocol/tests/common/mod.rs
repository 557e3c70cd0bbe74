#![allow(dead_code)]

use std::path::PathBuf;

use faircert_core::{CertifyOptions, ModelWeights, SensitiveSpec};
use faircert_protocol::{FixedPointEncoding, Prover, ProverState};
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

#[derive(Deserialize)]
pub struct Entry {
    pub model: String,
    pub spec: String,
    pub queries: String,
}

#[derive(Deserialize)]
struct Manifest {
    fixtures: Vec<Entry>,
}

pub fn manifest() -> Vec<Entry> {
    let text = std::fs::read_to_string(fixture("manifest.json")).unwrap();
    serde_json::from_str::<Manifest>(&text).unwrap().fixtures
}

pub fn prover(model_name: &str, spec_name: &str, seed: u64) -> Prover {
    Prover::new(
        &model(model_name),
        &spec(spec_name),
        FixedPointEncoding::default(),
        ProverState::from_seed(seed),
        CertifyOptions::default(),
    )
    .unwrap()
}
