//! Transcript mutations for soundness and binding tests.
//!
//! Each class corrupts one claim of an honest transcript the way a cheating
//! prover would, and names the sub-proof kind the verifier should blame.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::transcript::{CheckKind, FacetRef, ProofTranscript, SubProof};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MutationClass {
    WrongCode,
    TamperedRow,
    TamperedDistance,
    NonMinimalPop,
    FalseBoundary,
    WrongMin,
    WrongLabel,
}

impl MutationClass {
    pub const ALL: [MutationClass; 7] = [
        MutationClass::WrongCode,
        MutationClass::TamperedRow,
        MutationClass::TamperedDistance,
        MutationClass::NonMinimalPop,
        MutationClass::FalseBoundary,
        MutationClass::WrongMin,
        MutationClass::WrongLabel,
    ];

    /// The sub-proof a verifier should reject.
    pub fn target(self) -> CheckKind {
        match self {
            MutationClass::WrongCode | MutationClass::TamperedRow => CheckKind::Polytope,
            MutationClass::TamperedDistance => CheckKind::Distance,
            MutationClass::NonMinimalPop => CheckKind::Order,
            MutationClass::FalseBoundary => CheckKind::Boundary,
            MutationClass::WrongMin => CheckKind::Min,
            MutationClass::WrongLabel => CheckKind::Inference,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MutationClass::WrongCode => "wrong-code",
            MutationClass::TamperedRow => "tampered-row",
            MutationClass::TamperedDistance => "tampered-distance",
            MutationClass::NonMinimalPop => "non-minimal-pop",
            MutationClass::FalseBoundary => "false-boundary",
            MutationClass::WrongMin => "wrong-min",
            MutationClass::WrongLabel => "wrong-label",
        }
    }
}

fn positions(t: &ProofTranscript, kind: CheckKind) -> Vec<usize> {
    (0..t.subproofs.len()).filter(|&i| t.subproofs[i].kind() == kind).collect()
}

fn nonzero_delta<R: Rng>(rng: &mut R) -> BigInt {
    let d: i64 = rng.gen_range(1..=1000);
    BigInt::from(if rng.gen_bool(0.5) { d } else { -d })
}

/// Order sub-proofs that have a strictly farther pending facet to swap in.
fn swappable_pops(t: &ProofTranscript) -> Vec<(usize, FacetRef, BigInt)> {
    let mut out = Vec::new();
    let mut pending: BTreeMap<FacetRef, BigInt> = BTreeMap::new();
    for (i, p) in t.subproofs.iter().enumerate() {
        match p {
            SubProof::Polytope { .. } => pending.clear(),
            SubProof::Distance { facet, sq_distance, solid: true, .. } => {
                pending.insert(facet.clone(), sq_distance.clone());
            }
            SubProof::Order { facet: Some(f), sq_distance } => {
                if let Some((g, d)) = pending.iter().filter(|(_, d)| *d > sq_distance).max_by(|a, b| a.1.cmp(b.1)) {
                    out.push((i, g.clone(), d.clone()));
                }
                pending.remove(f);
            }
            _ => {}
        }
    }
    out
}

/// Applies one mutation; `None` when the transcript has nothing of that kind
/// to corrupt (e.g. no farther pending facet).
pub fn mutate<R: Rng>(t: &ProofTranscript, class: MutationClass, rng: &mut R) -> Option<ProofTranscript> {
    let mut m = t.clone();
    match class {
        MutationClass::WrongCode | MutationClass::TamperedRow => {
            let &i = positions(t, CheckKind::Polytope).choose(rng)?;
            let SubProof::Polytope { code, rows, .. } = &mut m.subproofs[i] else { unreachable!() };
            if class == MutationClass::WrongCode {
                let k = rng.gen_range(0..code.len());
                let mut bits = code.bits().to_vec();
                bits[k] = !bits[k];
                *code = faircert_core::ActivationCode::from_bits(bits);
            } else {
                let k = rng.gen_range(0..rows.len());
                rows[k].b += nonzero_delta(rng);
            }
        }
        MutationClass::TamperedDistance => {
            let &i = positions(t, CheckKind::Distance).choose(rng)?;
            let SubProof::Distance { sq_distance, .. } = &mut m.subproofs[i] else { unreachable!() };
            *sq_distance += nonzero_delta(rng);
        }
        MutationClass::NonMinimalPop => {
            let (i, g, d) = swappable_pops(t).choose(rng)?.clone();
            m.subproofs[i] = SubProof::Order { facet: Some(g), sq_distance: d };
        }
        MutationClass::FalseBoundary => {
            let &i = positions(t, CheckKind::Boundary).choose(rng)?;
            let SubProof::Boundary { is_boundary, .. } = &mut m.subproofs[i] else { unreachable!() };
            *is_boundary = !*is_boundary;
        }
        MutationClass::WrongMin => {
            let &i = positions(t, CheckKind::Min).first()?;
            let SubProof::Min { values, min } = &mut m.subproofs[i] else { unreachable!() };
            let max = values.iter().max()?.clone();
            *min = match rng.gen_range(0..3) {
                0 => &*min + 1,
                1 => &*min - rng.gen_range(1..=1000),
                _ if max > *min => max,
                _ => &*min + 1,
            };
        }
        MutationClass::WrongLabel => {
            let &i = positions(t, CheckKind::Inference).first()?;
            let n_classes = t.opening.model.n_classes;
            let SubProof::Inference { label, .. } = &mut m.subproofs[i] else { unreachable!() };
            *label = (*label + 1) % n_classes;
        }
    }
    Some(m)
}

/// Changes one committed weight or bias of the opened model by a nonzero amount.
/// Returns a description of the entry.
pub fn mutate_weight<R: Rng>(t: &mut ProofTranscript, rng: &mut R) -> String {
    let model = &mut t.opening.model;
    let total = model.n_entries();
    let mut k = rng.gen_range(0..total);
    let delta: i64 = if rng.gen_bool(0.5) { rng.gen_range(1..=1 << 16) } else { -rng.gen_range(1..=1 << 16) };
    for (l, layer) in model.layers.iter_mut().enumerate() {
        let n_w: usize = layer.weights.iter().map(Vec::len).sum();
        if k < n_w {
            let cols = layer.weights[0].len();
            let (i, j) = (k / cols, k % cols);
            layer.weights[i][j] += delta;
            return format!("w[{l}][{i}][{j}] {delta:+}");
        }
        k -= n_w;
        if k < layer.bias.len() {
            layer.bias[k] += delta;
            return format!("b[{l}][{k}] {delta:+}");
        }
        k -= layer.bias.len();
    }
    unreachable!("entry index within the model")
}
