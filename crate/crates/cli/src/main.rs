//! `faircert`: commit to a model, certify, prove, verify, inspect and bench.
//!
//! Every command prints one summary line `<verb> key=value ...` on stdout.
//! Exit codes: 0 success/accept, 1 verification reject, 2 usage, 3 I/O or schema.

mod bench;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use faircert_core::{certify_fairness, CertifyOptions, ModelWeights, SensitiveSpec};
use faircert_protocol::{
    verify_with, CheckKind, Commitment, ConstraintBackend, FixedPointEncoding, ProofTranscript, Prover, ProverState,
    Replay,
};
use log::info;
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "faircert", version, about = "Fairness certificates for ReLU networks against a committed model")]
struct Cli {
    /// Worker threads for per-assignment branches and bench queries.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Commit to a quantized model; writes the public commitment and the prover's secret state.
    Commit(CommitArgs),
    /// Certify a query without a proof; writes the certificate JSON.
    Certify(CertifyArgs),
    /// Prove a certificate against a commitment; writes the transcript.
    Prove(ProveArgs),
    /// Verify a transcript against a commitment and a claimed (label, epsilon).
    Verify(VerifyArgs),
    /// Summarize a transcript or a commitment file.
    Inspect(InspectArgs),
    /// Prove and verify every model/query pair of a manifest; writes CSV.
    Bench(bench::BenchArgs),
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    /// Half-width of the box bounding every region.
    #[arg(long, default_value_t = 100.0)]
    box_bound: f64,
    #[arg(long, default_value_t = 16)]
    scale_bits: u32,
}

#[derive(Args, Clone)]
struct QueryArgs {
    /// Inline query, comma separated.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "queries")]
    x: Option<String>,
    /// Query file `{ "queries": [[...], ...] }`.
    #[arg(long, requires = "index")]
    queries: Option<PathBuf>,
    #[arg(long)]
    index: Option<usize>,
}

#[derive(Args)]
struct CommitArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Seed for the commitment randomness.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Query file whose representative points are precomputed into the table.
    #[arg(long)]
    warm_up: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Secret prover state (randomness and point table).
    #[arg(long)]
    state: PathBuf,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    query: QueryArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProveArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    query: QueryArgs,
    #[arg(long)]
    commitment: PathBuf,
    #[arg(long)]
    state: PathBuf,
    /// Transcript path; `.json` writes canonical JSON, anything else binary.
    #[arg(long)]
    out: PathBuf,
    /// Fail instead of computing points missing from the committed table.
    #[arg(long)]
    no_on_demand: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Replay,
    Constraint,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    commitment: PathBuf,
    #[command(flatten)]
    query: QueryArgs,
    #[arg(long)]
    label: usize,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    transcript: PathBuf,
    #[arg(long, value_enum, default_value_t = Backend::Replay)]
    backend: Backend,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long, required_unless_present = "commitment")]
    transcript: Option<PathBuf>,
    #[arg(long)]
    commitment: Option<PathBuf>,
}

enum Failure {
    Reject(String),
    Usage(String),
    Io(String),
}

impl From<faircert_core::Error> for Failure {
    fn from(e: faircert_core::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<faircert_protocol::ProtocolError> for Failure {
    fn from(e: faircert_protocol::ProtocolError) -> Self {
        Failure::Io(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::new()
        .parse_filters(&std::env::var("FAIRCERT_LOG").unwrap_or_else(|_| "error".into()))
        .format_timestamp(None)
        .init();

    let threads = cli.threads.max(1);
    let r = match cli.cmd {
        Cmd::Commit(a) => commit(&a, threads),
        Cmd::Certify(a) => certify(&a, threads),
        Cmd::Prove(a) => prove(&a, threads),
        Cmd::Verify(a) => verify(&a),
        Cmd::Inspect(a) => inspect(&a),
        Cmd::Bench(a) => bench::run(&a, threads),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Reject(m)) => {
            println!("reject {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}

fn load_model(a: &ModelArgs) -> Result<(ModelWeights, SensitiveSpec), Failure> {
    let w = ModelWeights::load(&a.model).map_err(|e| Failure::Io(format!("{}: {e}", a.model.display())))?;
    let s = SensitiveSpec::load(&a.spec).map_err(|e| Failure::Io(format!("{}: {e}", a.spec.display())))?;
    s.validate(w.n_inputs).map_err(|e| Failure::Io(format!("{}: {e}", a.spec.display())))?;
    Ok((w, s))
}

fn options(a: &ModelArgs, threads: usize) -> CertifyOptions {
    CertifyOptions { box_bound: a.box_bound, threads, ..CertifyOptions::default() }
}

fn encoding(a: &ModelArgs) -> Result<FixedPointEncoding, Failure> {
    if !(1..=30).contains(&a.scale_bits) {
        return Err(Failure::Usage(format!("--scale-bits {} is outside 1..=30", a.scale_bits)));
    }
    Ok(FixedPointEncoding { scale_bits: a.scale_bits, ..FixedPointEncoding::default() })
}

#[derive(Deserialize)]
struct QueryFile {
    queries: Vec<Vec<f64>>,
}

pub(crate) fn read_queries(path: &Path) -> Result<Vec<Vec<f64>>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let f: QueryFile = serde_json::from_str(&text).map_err(|e| {
        Failure::Io(format!("{}: line {}, column {}: {e}", path.display(), e.line(), e.column()))
    })?;
    Ok(f.queries)
}

fn query(a: &QueryArgs) -> Result<Vec<f64>, Failure> {
    match (&a.x, &a.queries, a.index) {
        (Some(x), None, _) => x
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| Failure::Usage(format!("--x entry {v:?}: {e}"))))
            .collect(),
        (None, Some(path), Some(i)) => {
            let qs = read_queries(path)?;
            let n = qs.len();
            qs.into_iter()
                .nth(i)
                .ok_or_else(|| Failure::Usage(format!("--index {i} but {} holds {n} queries", path.display())))
        }
        _ => Err(Failure::Usage("give a query with --x or --queries/--index".into())),
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn commit(a: &CommitArgs, threads: usize) -> Outcome {
    let (w, s) = load_model(&a.model)?;
    let mut p = Prover::new(&w, &s, encoding(&a.model)?, ProverState::from_seed(a.seed), options(&a.model, threads))?;
    if let Some(path) = &a.warm_up {
        let qs = read_queries(path)?;
        let n = p.warm_up(&qs)?;
        info!("warm-up over {} queries left {n} representative points", qs.len());
    }
    p.commitment().save(&a.out)?;
    p.state().save(&a.state)?;
    let c = p.commitment();
    println!(
        "committed root={} leaves={} table={} scheme={}",
        c.root.to_hex(),
        c.n_leaves,
        p.state().rep_table.len(),
        c.scheme_id
    );
    Ok(())
}

fn certify(a: &CertifyArgs, threads: usize) -> Outcome {
    let (w, s) = load_model(&a.model)?;
    let x = query(&a.query)?;
    let b = certify_fairness(&w, &s, &x, &options(&a.model, threads))?;
    b.save(&a.out)?;
    let pops: Vec<usize> = b.per_s.iter().map(|t| t.pop_count).collect();
    println!("certified label={} epsilon={} pops={}", b.label, b.epsilon_lb, join(&pops));
    Ok(())
}

fn prove(a: &ProveArgs, threads: usize) -> Outcome {
    let (w, s) = load_model(&a.model)?;
    let x = query(&a.query)?;
    let published = Commitment::load(&a.commitment)?;
    let state = ProverState::load(&a.state)?;
    let mut p = Prover::new(&w, &s, encoding(&a.model)?, state, options(&a.model, threads))?;
    if *p.commitment() != published {
        return Err(Failure::Io(format!(
            "{} does not match the commitment recomputed from the model and state",
            a.commitment.display()
        )));
    }
    p.allow_on_demand = !a.no_on_demand;
    let t = p.prove(&x)?;
    let bytes = t.save(&a.out)?;
    let on_demand = p.on_demand_points().len();
    println!(
        "proved label={} epsilon={} pops={} bytes={} on_demand={} digest={}",
        t.label,
        t.epsilon_lb,
        join(&t.leakage),
        bytes,
        on_demand,
        t.digest().to_hex()
    );
    Ok(())
}

fn verify(a: &VerifyArgs) -> Outcome {
    let c = Commitment::load(&a.commitment)?;
    let x = query(&a.query)?;
    let t = ProofTranscript::load(&a.transcript)?;
    let verdict = match a.backend {
        Backend::Replay => verify_with(&mut Replay, &c, &x, a.label, a.epsilon, &t),
        Backend::Constraint => verify_with(&mut ConstraintBackend::new(), &c, &x, a.label, a.epsilon, &t),
    };
    match verdict {
        Ok(()) => {
            println!("accept label={} epsilon={} pops={}", a.label, a.epsilon, join(&t.leakage));
            Ok(())
        }
        Err(r) => Err(Failure::Reject(format!(
            "kind={} index={} reason={:?}",
            r.kind,
            r.index.map_or("-".to_string(), |i| i.to_string()),
            r.detail
        ))),
    }
}

fn inspect(a: &InspectArgs) -> Outcome {
    if let Some(path) = &a.commitment {
        let c = Commitment::load(path)?;
        println!(
            "commitment root={} leaves={} scale_bits={} scheme={}",
            c.root.to_hex(),
            c.n_leaves,
            c.encoding.scale_bits,
            c.scheme_id
        );
    }
    if let Some(path) = &a.transcript {
        let t = ProofTranscript::load(path)?;
        let bytes = std::fs::metadata(path).map_err(|e| Failure::Io(e.to_string()))?.len();
        let counts: Vec<String> = CheckKind::ALL
            .iter()
            .map(|k| format!("{}={}", k.name().to_lowercase(), t.count(*k)))
            .collect();
        println!(
            "transcript label={} epsilon={} pops={} bytes={} subproofs={} {} perturbed={} root={} digest={}",
            t.label,
            t.epsilon_lb,
            join(&t.leakage),
            bytes,
            t.subproofs.len(),
            counts.join(" "),
            t.perturbation.as_ref().map_or(0, |p| p.steps),
            t.commitment.root.to_hex(),
            t.digest().to_hex()
        );
    }
    Ok(())
}
