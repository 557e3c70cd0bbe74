//! Binary SHA-256 hash tree with domain-separated leaves and nodes.
//!
//! A node without a sibling is promoted to the next level unchanged, so an
//! authentication path only lists the siblings that exist; the verifier
//! recovers the shape from the leaf count.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Digest> {
        let v = hex::decode(s).ok()?;
        Some(Digest(v.try_into().ok()?))
    }
}

impl std::fmt::Debug for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", &self.to_hex()[..16])
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("expected 64 hex digits"))
    }
}

pub fn sha256(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

pub fn leaf_hash(salt: &Digest, payload: &[u8]) -> Digest {
    sha256(&[&[0x00], &salt.0, payload])
}

fn node_hash(l: &Digest, r: &Digest) -> Digest {
    sha256(&[&[0x01], &l.0, &r.0])
}

#[derive(Debug, Clone)]
pub struct MerkleTree {
    levels: Vec<Vec<Digest>>,
}

impl MerkleTree {
    pub fn new(leaves: Vec<Digest>) -> MerkleTree {
        assert!(!leaves.is_empty(), "tree needs a leaf");
        let mut levels = vec![leaves];
        while levels.last().unwrap().len() > 1 {
            let prev = levels.last().unwrap();
            let next = prev
                .chunks(2)
                .map(|c| if c.len() == 2 { node_hash(&c[0], &c[1]) } else { c[0] })
                .collect();
            levels.push(next);
        }
        MerkleTree { levels }
    }

    pub fn root(&self) -> Digest {
        self.levels.last().unwrap()[0]
    }

    pub fn n_leaves(&self) -> usize {
        self.levels[0].len()
    }

    pub fn leaf(&self, index: usize) -> Digest {
        self.levels[0][index]
    }

    pub fn path(&self, mut index: usize) -> Vec<Digest> {
        let mut out = Vec::new();
        for level in &self.levels[..self.levels.len() - 1] {
            let sib = index ^ 1;
            if sib < level.len() {
                out.push(level[sib]);
            }
            index /= 2;
        }
        out
    }
}

/// Recomputes the root from a leaf and its path.
pub fn root_from_path(n_leaves: usize, mut index: usize, leaf: Digest, path: &[Digest]) -> Option<Digest> {
    if index >= n_leaves {
        return None;
    }
    let mut width = n_leaves;
    let mut node = leaf;
    let mut siblings = path.iter();
    while width > 1 {
        let sib = index ^ 1;
        if sib < width {
            let s = siblings.next()?;
            node = if index % 2 == 0 { node_hash(&node, s) } else { node_hash(s, &node) };
        }
        index /= 2;
        width = width.div_ceil(2);
    }
    siblings.next().is_none().then_some(node)
}

pub fn verify_path(root: &Digest, n_leaves: usize, index: usize, leaf: Digest, path: &[Digest]) -> bool {
    root_from_path(n_leaves, index, leaf, path).as_ref() == Some(root)
}
