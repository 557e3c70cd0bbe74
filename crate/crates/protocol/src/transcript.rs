//! Proof transcript: the ordered sub-proofs a verifier replays, plus the
//! openings that tie them to the commitment.
//!
//! Per sensitive assignment: one `Polytope`, `Distance` for each listed facet
//! of the start cell, then per pop an `Order`, a `Boundary` and (after a
//! negative boundary) a `Neighbor` followed by the new cell's `Distance`s.
//! Termination is a positive `Boundary` or an `Order` without a facet (every
//! pending facet is beyond the box). Then one `Min` and one `Inference`.

use std::fmt;
use std::path::Path;

use faircert_core::{ActivationCode, TightRow};
use num_bigint::BigInt;
use serde::{Deserialize, Serialize};

use crate::bigint_serde;
use crate::commitment::{Commitment, LeafOpening, ModelOpening};
use crate::error::{read_file, write_file, ProtocolError, Result};
use crate::exact::{IntAffine, IntRow, RatPoint};
use crate::merkle::{sha256, Digest};

pub const TRANSCRIPT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CheckKind {
    Polytope,
    Distance,
    Neighbor,
    Boundary,
    Order,
    Min,
    Inference,
}

impl CheckKind {
    pub const ALL: [CheckKind; 7] = [
        CheckKind::Polytope,
        CheckKind::Distance,
        CheckKind::Neighbor,
        CheckKind::Boundary,
        CheckKind::Order,
        CheckKind::Min,
        CheckKind::Inference,
    ];

    /// The checks run once per traversal step.
    pub const TRAVERSAL: [CheckKind; 5] = [
        CheckKind::Polytope,
        CheckKind::Distance,
        CheckKind::Neighbor,
        CheckKind::Boundary,
        CheckKind::Order,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckKind::Polytope => "Polytope",
            CheckKind::Distance => "Distance",
            CheckKind::Neighbor => "Neighbor",
            CheckKind::Boundary => "Boundary",
            CheckKind::Order => "Order",
            CheckKind::Min => "Min",
            CheckKind::Inference => "Inference",
        }
    }
}

impl fmt::Display for CheckKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A facet named by the cell that lists it and the row it lies on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FacetRef {
    pub owner: ActivationCode,
    #[serde(with = "tight_string")]
    pub tight: TightRow,
}

/// `n<i>` / `l<j>`; also keeps the binary form free of tagged enums.
pub(crate) mod tight_string {
    use faircert_core::TightRow;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn to_string(t: &TightRow) -> String {
        match t {
            TightRow::Neuron(i) => format!("n{i}"),
            TightRow::Label(j) => format!("l{j}"),
        }
    }

    pub fn parse(s: &str) -> Option<TightRow> {
        let (head, rest) = s.split_at_checked(1)?;
        let i = rest.parse().ok()?;
        match head {
            "n" => Some(TightRow::Neuron(i)),
            "l" => Some(TightRow::Label(i)),
            _ => None,
        }
    }

    pub fn serialize<S: Serializer>(t: &TightRow, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&to_string(t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<TightRow, D::Error> {
        let s = String::deserialize(d)?;
        parse(&s).ok_or_else(|| serde::de::Error::custom(format!("bad facet row {s:?}")))
    }
}

impl FacetRef {
    /// Facets depend on the certified label through the cell's label rows.
    pub fn table_key(&self, s_index: usize, label: usize) -> String {
        format!("facet/{s_index}/{label}/{}/{}", self.owner, tight_string::to_string(&self.tight))
    }
}

pub fn region_key(s_index: usize, code: &ActivationCode) -> String {
    format!("region/{s_index}/{code}")
}

/// A representative point; `opening` is `None` when it was computed on
/// demand after the commitment was published.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepPoint {
    pub key: String,
    pub point: RatPoint,
    pub opening: Option<LeafOpening>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubProof {
    Polytope {
        s_index: usize,
        code: ActivationCode,
        /// Sliced cell rows: neurons, then label rows.
        rows: Vec<IntRow>,
        label_consistent: bool,
        /// Class whose label row the query violates, when inconsistent.
        mismatch_class: Option<usize>,
    },
    Distance {
        facet: FacetRef,
        row: IntRow,
        #[serde(with = "bigint_serde::one")]
        sq_distance: BigInt,
        /// False for facets the prover found empty; those never enter the queue.
        solid: bool,
    },
    Neighbor {
        via: FacetRef,
        code: ActivationCode,
        point: RepPoint,
        rows: Vec<IntRow>,
        precomputed: bool,
    },
    Boundary {
        facet: FacetRef,
        is_boundary: bool,
        point: RepPoint,
        linear_map: IntAffine,
        precomputed: bool,
    },
    Order {
        /// `None`: stop at the box, every pending facet is at least `sq_distance` away.
        facet: Option<FacetRef>,
        #[serde(with = "bigint_serde::one")]
        sq_distance: BigInt,
    },
    Min {
        #[serde(with = "bigint_serde::vec")]
        values: Vec<BigInt>,
        #[serde(with = "bigint_serde::one")]
        min: BigInt,
    },
    Inference {
        code: ActivationCode,
        label: usize,
    },
}

impl SubProof {
    pub fn kind(&self) -> CheckKind {
        match self {
            SubProof::Polytope { .. } => CheckKind::Polytope,
            SubProof::Distance { .. } => CheckKind::Distance,
            SubProof::Neighbor { .. } => CheckKind::Neighbor,
            SubProof::Boundary { .. } => CheckKind::Boundary,
            SubProof::Order { .. } => CheckKind::Order,
            SubProof::Min { .. } => CheckKind::Min,
            SubProof::Inference { .. } => CheckKind::Inference,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationRecord {
    pub coordinate: usize,
    /// Grid units added to the quantized coordinate.
    pub steps: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProofTranscript {
    pub v: u32,
    pub commitment: Commitment,
    pub opening: ModelOpening,
    pub query: Vec<f64>,
    /// Grid point actually certified.
    pub query_fixed: Vec<i64>,
    pub perturbation: Option<PerturbationRecord>,
    pub label: usize,
    pub epsilon_lb: f64,
    #[serde(with = "bigint_serde::one")]
    pub epsilon_sq_fixed: BigInt,
    pub box_bound_fixed: i64,
    pub subproofs: Vec<SubProof>,
    pub leakage: Vec<usize>,
}

/// Serializes with object keys in sorted order.
pub fn canonical_json<T: Serialize>(v: &T) -> String {
    let value = serde_json::to_value(v).expect("value serializes");
    serde_json::to_string(&value).expect("json value serializes")
}

impl ProofTranscript {
    pub fn to_canonical_json(&self) -> String {
        canonical_json(self)
    }

    pub fn digest(&self) -> Digest {
        sha256(&[self.to_canonical_json().as_bytes()])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        bincode::serialize(self).expect("transcript encodes")
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        bincode::deserialize(b).map_err(|e| ProtocolError::Schema(format!("binary transcript: {e}")))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let t: ProofTranscript = serde_json::from_str(s)?;
        if t.v != TRANSCRIPT_VERSION {
            return Err(ProtocolError::Schema(format!("unsupported transcript version {}", t.v)));
        }
        Ok(t)
    }

    /// JSON for `.json` paths, binary otherwise.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<usize> {
        let path = path.as_ref();
        let bytes = if is_json(path) {
            (self.to_canonical_json() + "\n").into_bytes()
        } else {
            self.to_bytes()
        };
        write_file(path, &bytes)?;
        Ok(bytes.len())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if is_json(path) {
            Self::from_json_str(&read_file(path)?)
        } else {
            let b = std::fs::read(path).map_err(|e| ProtocolError::Io(format!("{}: {e}", path.display())))?;
            Self::from_bytes(&b)
        }
    }

    pub fn count(&self, kind: CheckKind) -> usize {
        self.subproofs.iter().filter(|p| p.kind() == kind).count()
    }
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "json")
}
