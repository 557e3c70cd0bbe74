//! Salted hash-tree commitment to the quantized model, the sensitive spec and
//! the table of representative points.
//!
//! Leaf order: header, spec, then per layer its weights (row-major) and its
//! biases, then representative-point records sorted by key. Every leaf is
//! `H(0x00 || salt_i || payload)` with `salt_i = H("salt" || r || i)`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{FixedPointEncoding, QuantizedModel, QuantizedSpec};
use crate::error::{read_file, write_file, ProtocolError, Result};
use crate::exact::RatPoint;
use crate::merkle::{leaf_hash, sha256, verify_path, Digest, MerkleTree};

pub const SCHEME_ID: &str = "faircert-merkle-sha256-v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Commitment {
    pub scheme_id: String,
    pub root: Digest,
    pub randomness_commitment: Digest,
    pub encoding: FixedPointEncoding,
    pub n_leaves: usize,
}

impl Commitment {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("commitment serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&read_file(path.as_ref())?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), (self.to_json_string() + "\n").as_bytes())
    }
}

/// Secret side of a commitment: the randomness and the committed point table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProverState {
    pub randomness: Digest,
    pub rep_table: BTreeMap<String, RatPoint>,
}

impl ProverState {
    pub fn from_seed(seed: u64) -> ProverState {
        let mut r = [0u8; 32];
        ChaCha20Rng::seed_from_u64(seed).fill_bytes(&mut r);
        ProverState {
            randomness: Digest(r),
            rep_table: BTreeMap::new(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&read_file(path.as_ref())?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("state serializes");
        write_file(path.as_ref(), (text + "\n").as_bytes())
    }
}

pub fn randomness_commitment(r: &Digest) -> Digest {
    sha256(&[b"rand", &r.0])
}

pub fn leaf_salt(r: &Digest, index: usize) -> Digest {
    sha256(&[b"salt", &r.0, &(index as u64).to_le_bytes()])
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Payloads of the model leaves (header, spec, weights, biases), in leaf order.
pub fn model_payloads(qm: &QuantizedModel, spec: &QuantizedSpec, enc: &FixedPointEncoding) -> Vec<Vec<u8>> {
    let mut out = Vec::with_capacity(qm.n_entries() + 2);
    let mut header = b"header".to_vec();
    let dims = qm.layer_dims();
    push_u64(&mut header, qm.n_classes as u64);
    push_u64(&mut header, dims.len() as u64);
    for d in dims {
        push_u64(&mut header, d as u64);
    }
    push_u64(&mut header, enc.scale_bits as u64);
    push_u64(&mut header, enc.modulus);
    out.push(header);

    let mut sp = b"spec".to_vec();
    push_u64(&mut sp, spec.features.len() as u64);
    for f in &spec.features {
        push_u64(&mut sp, f.index as u64);
        push_u64(&mut sp, f.domain.len() as u64);
        for v in &f.domain {
            push_u64(&mut sp, enc.to_field(*v));
        }
    }
    out.push(sp);

    for (l, layer) in qm.layers.iter().enumerate() {
        for (i, row) in layer.weights.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let mut p = b"w".to_vec();
                for k in [l, i, j] {
                    push_u64(&mut p, k as u64);
                }
                push_u64(&mut p, enc.to_field(*v));
                out.push(p);
            }
        }
        for (i, v) in layer.bias.iter().enumerate() {
            let mut p = b"b".to_vec();
            push_u64(&mut p, l as u64);
            push_u64(&mut p, i as u64);
            push_u64(&mut p, enc.to_field(*v));
            out.push(p);
        }
    }
    out
}

pub fn rep_payload(key: &str, point: &RatPoint) -> Vec<u8> {
    let mut p = b"rep".to_vec();
    push_u64(&mut p, key.len() as u64);
    p.extend_from_slice(key.as_bytes());
    let mut text = point.den.to_string();
    for v in &point.num {
        text.push(',');
        text.push_str(&v.to_string());
    }
    push_u64(&mut p, text.len() as u64);
    p.extend_from_slice(text.as_bytes());
    p
}

/// Opening of one leaf: its salt and authentication path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafOpening {
    pub index: usize,
    pub salt: Digest,
    pub path: Vec<Digest>,
}

impl LeafOpening {
    pub fn verify(&self, c: &Commitment, payload: &[u8]) -> bool {
        verify_path(&c.root, c.n_leaves, self.index, leaf_hash(&self.salt, payload), &self.path)
    }
}

/// All model leaves opened: the verifier learns the quantized weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOpening {
    pub model: QuantizedModel,
    pub spec: QuantizedSpec,
    pub leaves: Vec<LeafOpening>,
}

impl ModelOpening {
    /// Index of the first leaf that fails to authenticate, if any.
    pub fn first_failure(&self, c: &Commitment) -> Option<usize> {
        let payloads = model_payloads(&self.model, &self.spec, &c.encoding);
        if payloads.len() != self.leaves.len() {
            return Some(payloads.len().min(self.leaves.len()));
        }
        payloads
            .iter()
            .zip(&self.leaves)
            .enumerate()
            .find(|(i, (p, o))| o.index != *i || !o.verify(c, p))
            .map(|(i, _)| i)
    }
}

/// The committed tree together with what the prover needs to open it.
#[derive(Debug, Clone)]
pub struct CommitTree {
    pub commitment: Commitment,
    tree: MerkleTree,
    salts: Vec<Digest>,
    n_model_leaves: usize,
    rep_index: BTreeMap<String, usize>,
}

impl CommitTree {
    pub fn build(
        qm: &QuantizedModel,
        spec: &QuantizedSpec,
        enc: &FixedPointEncoding,
        state: &ProverState,
    ) -> Result<CommitTree> {
        let mut payloads = model_payloads(qm, spec, enc);
        let n_model_leaves = payloads.len();
        let mut rep_index = BTreeMap::new();
        for (key, point) in &state.rep_table {
            rep_index.insert(key.clone(), payloads.len());
            payloads.push(rep_payload(key, point));
        }
        let salts: Vec<Digest> = (0..payloads.len()).map(|i| leaf_salt(&state.randomness, i)).collect();
        let leaves = payloads.iter().zip(&salts).map(|(p, s)| leaf_hash(s, p)).collect();
        let tree = MerkleTree::new(leaves);
        if tree.n_leaves() != payloads.len() {
            return Err(ProtocolError::Prover("leaf count mismatch".into()));
        }
        let commitment = Commitment {
            scheme_id: SCHEME_ID.to_string(),
            root: tree.root(),
            randomness_commitment: randomness_commitment(&state.randomness),
            encoding: *enc,
            n_leaves: payloads.len(),
        };
        Ok(CommitTree {
            commitment,
            tree,
            salts,
            n_model_leaves,
            rep_index,
        })
    }

    pub fn open(&self, index: usize) -> LeafOpening {
        LeafOpening {
            index,
            salt: self.salts[index],
            path: self.tree.path(index),
        }
    }

    pub fn open_model(&self, qm: &QuantizedModel, spec: &QuantizedSpec) -> ModelOpening {
        ModelOpening {
            model: qm.clone(),
            spec: spec.clone(),
            leaves: (0..self.n_model_leaves).map(|i| self.open(i)).collect(),
        }
    }

    pub fn open_rep(&self, key: &str) -> Option<LeafOpening> {
        self.rep_index.get(key).map(|&i| self.open(i))
    }
}

pub fn commit_model(
    qm: &QuantizedModel,
    spec: &QuantizedSpec,
    enc: &FixedPointEncoding,
    state: &ProverState,
) -> Result<Commitment> {
    Ok(CommitTree::build(qm, spec, enc, state)?.commitment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{QFeature, QLayer};

    fn qm() -> QuantizedModel {
        QuantizedModel {
            n_inputs: 2,
            n_classes: 2,
            layers: vec![
                QLayer { weights: vec![vec![1, 2], vec![3, 4], vec![5, 6]], bias: vec![7, 8, 9] },
                QLayer { weights: vec![vec![1, -1, 2], vec![-3, 0, 1]], bias: vec![0, -5] },
            ],
        }
    }

    fn spec() -> QuantizedSpec {
        QuantizedSpec { features: vec![QFeature { index: 0, domain: vec![0, 65536] }] }
    }

    #[test]
    fn commitment_is_deterministic_and_seed_dependent() {
        let enc = FixedPointEncoding::default();
        let a = commit_model(&qm(), &spec(), &enc, &ProverState::from_seed(1)).unwrap();
        let b = commit_model(&qm(), &spec(), &enc, &ProverState::from_seed(1)).unwrap();
        let c = commit_model(&qm(), &spec(), &enc, &ProverState::from_seed(2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.root, c.root);
        assert_eq!(a.n_leaves, 2 + qm().n_entries());
    }

    #[test]
    fn every_single_entry_change_moves_the_root() {
        let enc = FixedPointEncoding::default();
        let st = ProverState::from_seed(3);
        let base = commit_model(&qm(), &spec(), &enc, &st).unwrap().root;
        let m = qm();
        for l in 0..m.layers.len() {
            for i in 0..m.layers[l].weights.len() {
                for j in 0..m.layers[l].weights[i].len() {
                    let mut w = m.clone();
                    w.layers[l].weights[i][j] += 1;
                    assert_ne!(commit_model(&w, &spec(), &enc, &st).unwrap().root, base);
                }
                let mut w = m.clone();
                w.layers[l].bias[i] -= 1;
                assert_ne!(commit_model(&w, &spec(), &enc, &st).unwrap().root, base);
            }
        }
    }

    #[test]
    fn model_and_rep_openings_verify() {
        let enc = FixedPointEncoding::default();
        let mut st = ProverState::from_seed(4);
        let p = RatPoint::from_f64(&[0.25, -1.5], 32);
        st.rep_table.insert("region/0/01".into(), p.clone());
        let tree = CommitTree::build(&qm(), &spec(), &enc, &st).unwrap();
        let c = &tree.commitment;
        let opening = tree.open_model(&qm(), &spec());
        assert_eq!(opening.first_failure(c), None);
        let rep = tree.open_rep("region/0/01").unwrap();
        assert!(rep.verify(c, &rep_payload("region/0/01", &p)));
        assert!(!rep.verify(c, &rep_payload("region/0/10", &p)));

        let mut bad = opening.clone();
        bad.model.layers[1].weights[0][2] += 1;
        assert!(bad.first_failure(c).is_some());
    }
}
