//! `bench`: prove and verify every (model, query) pair of a manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use faircert_core::{CertifyOptions, ModelWeights, SensitiveSpec};
use faircert_protocol::{verify_with, CheckKind, ConstraintBackend, FixedPointEncoding, Prover, ProverState, Replay};
use rayon::prelude::*;
use serde::Deserialize;

use crate::{read_queries, Failure, Outcome};

#[derive(Args)]
pub struct BenchArgs {
    /// Fixture manifest; model, spec and query paths are relative to it.
    #[arg(long)]
    manifest: PathBuf,
    /// Queries per model (from the start of each query file).
    #[arg(long, default_value_t = 5)]
    queries_per_model: usize,
    /// Only models whose file name contains this.
    #[arg(long)]
    filter: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Deserialize)]
struct Manifest {
    fixtures: Vec<Entry>,
}

#[derive(Deserialize)]
struct Entry {
    model: String,
    spec: String,
    queries: String,
}

pub const HEADER: &str = "model,query,label,epsilon_lb,pops,pops_total,prove_ms,verify_ms,transcript_bytes,\
c_polytope,c_distance,c_neighbor,c_boundary,c_order,c_min,c_inference";

struct Row {
    line: String,
    costs: BTreeMap<CheckKind, u64>,
}

pub fn run(a: &BenchArgs, threads: usize) -> Outcome {
    let text = std::fs::read_to_string(&a.manifest).map_err(|e| Failure::Io(format!("{}: {e}", a.manifest.display())))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Failure::Io(format!("{}: {e}", a.manifest.display())))?;
    let dir = a.manifest.parent().map(PathBuf::from).unwrap_or_default();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::Io(e.to_string()))?;

    let mut csv = String::from(HEADER);
    csv.push('\n');
    let mut totals: BTreeMap<CheckKind, u64> = BTreeMap::new();
    let mut n_rows = 0;
    for e in m.fixtures.iter().filter(|e| a.filter.as_ref().is_none_or(|f| e.model.contains(f.as_str()))) {
        let w = ModelWeights::load(dir.join(&e.model))?;
        let s = SensitiveSpec::load(dir.join(&e.spec))?;
        let qs: Vec<Vec<f64>> = read_queries(&dir.join(&e.queries))?.into_iter().take(a.queries_per_model).collect();
        let p = Prover::new(
            &w,
            &s,
            FixedPointEncoding::default(),
            ProverState::from_seed(a.seed),
            CertifyOptions::default(),
        )?;
        let rows: Vec<Result<Row, Failure>> =
            pool.install(|| qs.par_iter().enumerate().map(|(i, q)| bench_one(&p, &e.model, i, q)).collect());
        for r in rows {
            let r = r?;
            csv.push_str(&r.line);
            csv.push('\n');
            for (k, c) in r.costs {
                *totals.entry(k).or_default() += c;
            }
            n_rows += 1;
        }
    }
    std::fs::write(&a.out, &csv).map_err(|e| Failure::Io(format!("{}: {e}", a.out.display())))?;

    let mut summary = format!("bench rows={n_rows}");
    for k in CheckKind::ALL {
        let _ = write!(summary, " {}={}", k.name().to_lowercase(), totals.get(&k).copied().unwrap_or(0));
    }
    let top = CheckKind::TRAVERSAL
        .iter()
        .max_by_key(|k| totals.get(k).copied().unwrap_or(0))
        .expect("five traversal kinds");
    let _ = write!(summary, " largest_traversal={}", top.name().to_lowercase());
    println!("{summary}");
    Ok(())
}

fn bench_one(p: &Prover, model: &str, i: usize, q: &[f64]) -> Result<Row, Failure> {
    let t0 = Instant::now();
    let t = p.prove(q)?;
    let prove_ms = t0.elapsed().as_secs_f64() * 1e3;
    let t1 = Instant::now();
    let replay = verify_with(&mut Replay, p.commitment(), q, t.label, t.epsilon_lb, &t);
    let verify_ms = t1.elapsed().as_secs_f64() * 1e3;
    let mut cb = ConstraintBackend::new();
    let constraint = verify_with(&mut cb, p.commitment(), q, t.label, t.epsilon_lb, &t);
    if let Err(r) = replay.as_ref().and(constraint.as_ref()) {
        return Err(Failure::Io(format!("{model} query {i}: honest transcript rejected: {r}")));
    }
    let costs: BTreeMap<CheckKind, u64> = CheckKind::ALL.iter().map(|k| (*k, cb.constraints(*k))).collect();
    let pops: Vec<String> = t.leakage.iter().map(ToString::to_string).collect();
    let mut line = format!(
        "{model},{i},{},{},{},{},{prove_ms:.3},{verify_ms:.3},{}",
        t.label,
        t.epsilon_lb,
        pops.join(";"),
        t.leakage.iter().sum::<usize>(),
        t.to_bytes().len()
    );
    for k in CheckKind::ALL {
        let _ = write!(line, ",{}", costs[&k]);
    }
    Ok(Row { line, costs })
}
