mod common;

use common::*;
use faircert_protocol::mutation::{mutate, mutate_weight, MutationClass};
use faircert_protocol::transcript::SubProof;
use faircert_protocol::{
    verify_certificate, verify_with, CheckKind, ConstraintBackend, ProofTranscript, RejectKind,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn honest_transcripts_verify_on_every_fixture() {
    for e in manifest() {
        let p = prover(&e.model, &e.spec, 11);
        for q in queries(&e.queries).iter().take(2) {
            let t = p.prove(q).unwrap();
            assert_eq!(verify_certificate(p.commitment(), q, t.label, t.epsilon_lb, &t), Ok(()), "{}", e.model);
            let mut cb = ConstraintBackend::new();
            assert_eq!(verify_with(&mut cb, p.commitment(), q, t.label, t.epsilon_lb, &t), Ok(()), "{}", e.model);
            let pops: usize = t.leakage.iter().sum();
            assert_eq!(pops, t.count(CheckKind::Order) - boxed(&t));
        }
    }
}

/// Order sub-proofs that stop at the box rather than pop a facet.
fn boxed(t: &ProofTranscript) -> usize {
    t.subproofs
        .iter()
        .filter(|p| matches!(p, SubProof::Order { facet: None, .. }))
        .count()
}

#[test]
fn every_mutation_class_is_rejected_at_its_subproof() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (model, spec, qs) in [
        ("german_4_2_wd10.json", "german_spec.json", "german_queries.json"),
        ("toy_3_6_4.json", "toy3_spec.json", "toy3_queries.json"),
    ] {
        let p = prover(model, spec, 3);
        let transcripts: Vec<_> = queries(qs).iter().take(4).map(|q| (q.clone(), p.prove(q).unwrap())).collect();
        for class in MutationClass::ALL {
            let mut trials = 0;
            for (q, t) in &transcripts {
                for _ in 0..3 {
                    let Some(m) = mutate(t, class, &mut rng) else { continue };
                    trials += 1;
                    let r = verify_certificate(p.commitment(), q, t.label, t.epsilon_lb, &m).unwrap_err();
                    assert_eq!(r.kind, RejectKind::Check(class.target()), "{model} {}: {r}", class.name());
                    let mut cb = ConstraintBackend::new();
                    let rc = verify_with(&mut cb, p.commitment(), q, t.label, t.epsilon_lb, &m).unwrap_err();
                    assert_eq!(rc.kind, r.kind);
                    assert_eq!(rc.index, r.index);
                }
            }
            assert!(trials > 0, "{model}: no site for {}", class.name());
        }
    }
}

#[test]
fn changed_weights_fail_the_opening() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = prover("credit_4_2_wd0.json", "credit_spec.json", 1);
    let q = &queries("credit_queries.json")[0];
    let t = p.prove(q).unwrap();
    for _ in 0..25 {
        let mut m = t.clone();
        let what = mutate_weight(&mut m, &mut rng);
        let r = verify_certificate(p.commitment(), q, t.label, t.epsilon_lb, &m).unwrap_err();
        assert_eq!(r.kind, RejectKind::Opening, "{what}");
    }
}

#[test]
fn a_different_commitment_or_claim_is_rejected() {
    let p = prover("german_2_4_wd10.json", "german_spec.json", 1);
    let other = prover("german_2_4_wd10.json", "german_spec.json", 2);
    let q = &queries("german_queries.json")[1];
    let t = p.prove(q).unwrap();
    let r = verify_certificate(other.commitment(), q, t.label, t.epsilon_lb, &t).unwrap_err();
    assert_eq!(r.kind, RejectKind::Opening);

    let r = verify_certificate(p.commitment(), q, 1 - t.label, t.epsilon_lb, &t).unwrap_err();
    assert_eq!(r.kind, RejectKind::Claim);
    let r = verify_certificate(p.commitment(), q, t.label, t.epsilon_lb * 1.5 + 1e-3, &t).unwrap_err();
    assert_eq!(r.kind, RejectKind::Claim);
    let mut moved = q.clone();
    moved[0] += 0.25;
    let r = verify_certificate(p.commitment(), &moved, t.label, t.epsilon_lb, &t).unwrap_err();
    assert_eq!(r.kind, RejectKind::Claim);

    let mut extra = t.clone();
    extra.subproofs.push(extra.subproofs.last().unwrap().clone());
    let r = verify_certificate(p.commitment(), q, t.label, t.epsilon_lb, &extra).unwrap_err();
    assert_eq!(r.kind, RejectKind::Malformed);

    let mut leak = t.clone();
    leak.leakage[0] += 1;
    let r = verify_certificate(p.commitment(), q, t.label, t.epsilon_lb, &leak).unwrap_err();
    assert_eq!(r.kind, RejectKind::Malformed);
}

#[test]
fn transcripts_are_deterministic_and_round_trip() {
    let q = &queries("adult_queries.json")[3];
    let a = prover("adult_4_2_wd0.json", "adult_spec.json", 42).prove(q).unwrap();
    let b = prover("adult_4_2_wd0.json", "adult_spec.json", 42).prove(q).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(a.digest(), b.digest());

    let dir = tempfile::tempdir().unwrap();
    for name in ["t.json", "t.bin"] {
        let path = dir.path().join(name);
        let n = a.save(&path).unwrap();
        assert_eq!(n as u64, std::fs::metadata(&path).unwrap().len());
        assert_eq!(ProofTranscript::load(&path).unwrap(), a);
    }
}

#[test]
fn nearby_queries_reuse_cached_cells() {
    let p = prover("german_4_2_wd10.json", "german_spec.json", 1);
    let q = queries("german_queries.json")[0].clone();
    p.prove(&q).unwrap();
    let before = p.cache_stats();
    let mut near = q.clone();
    near[1] += 1e-3;
    p.prove(&near).unwrap();
    assert!(p.cache_stats().hits > before.hits);
}

#[test]
fn warmed_table_serves_every_point_without_on_demand_work() {
    let qs: Vec<Vec<f64>> = queries("credit_queries.json").into_iter().take(3).collect();
    let mut p = prover("credit_2_4_wd0.json", "credit_spec.json", 8);
    let cold = p.prove(&qs[0]).unwrap();
    assert!(!p.on_demand_points().is_empty());
    let before = p.commitment().clone();
    let n = p.warm_up(&qs).unwrap();
    assert!(n > 0);
    assert_ne!(p.commitment().root, before.root);
    p.allow_on_demand = false;
    for q in &qs {
        let t = p.prove(q).unwrap();
        assert!(t.subproofs.iter().all(|s| match s {
            SubProof::Boundary { precomputed, .. } | SubProof::Neighbor { precomputed, .. } => *precomputed,
            _ => true,
        }));
        assert_eq!(verify_certificate(p.commitment(), q, t.label, t.epsilon_lb, &t), Ok(()));
    }
    // The cold transcript was bound to the old commitment.
    assert_eq!(verify_certificate(&before, &qs[0], cold.label, cold.epsilon_lb, &cold), Ok(()));
    let r = verify_certificate(p.commitment(), &qs[0], cold.label, cold.epsilon_lb, &cold).unwrap_err();
    assert_eq!(r.kind, RejectKind::Opening);
}

#[test]
fn constraint_counts_are_stable_and_pinned() {
    let p = prover("toy_2_2_2.json", "toy_spec.json", 1);
    let q = &queries("toy_queries.json")[0];
    let t = p.prove(q).unwrap();
    let run = || {
        let mut cb = ConstraintBackend::new();
        verify_with(&mut cb, p.commitment(), q, t.label, t.epsilon_lb, &t).unwrap();
        cb.costs
    };
    let costs = run();
    assert_eq!(costs, run());
    let counts: Vec<(CheckKind, u64)> = costs.iter().map(|(k, c)| (*k, c.constraints)).collect();
    assert_eq!(
        counts,
        [
            (CheckKind::Polytope, 1021),
            (CheckKind::Distance, 4226),
            (CheckKind::Neighbor, 1309),
            (CheckKind::Boundary, 2882),
            (CheckKind::Order, 254),
            (CheckKind::Min, 65),
            (CheckKind::Inference, 270),
        ]
    );
}
