//! Argument parsing and the five subcommands.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use lca_core::io::{
    read_vector_file, save_problem, vector_to_csv_bytes, write_atomic, ProblemMeta,
};
use lca_core::problem::DIAGNOSTIC_ZERO_TOL;
use lca_core::{
    field, fixed_region_residual, kkt_certificate, lift_solution, Activation, ConstraintMode,
    FixedRegionReport, LcaError, Method, OptimalityCertificate, Problem, Result, Scheme,
    UniquenessCheck, Verdict,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RunConfig, U0Kind};
use crate::experiment::{execute, Experiment, ExperimentReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_FAILED: i32 = 3;
pub const EXIT_NUMERICS: i32 = 4;

/// Exit code for an error that escaped a subcommand.
pub fn exit_code(err: &LcaError) -> i32 {
    match err {
        LcaError::Numerics { .. } => EXIT_NUMERICS,
        LcaError::NonConverged { .. } => EXIT_FAILED,
        _ => EXIT_CONFIG,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "lca-lab",
    version,
    about = "Run and certify LCA sparse-coding experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random problem directory.
    Gen(GenArgs),
    /// Run the oracle and the LCA flow, and grade the result.
    Run(RunArgs),
    /// Solve with the proximal-gradient oracle only.
    Oracle(OracleArgs),
    /// Check optimality of a supplied coefficient vector.
    Verify(VerifyArgs),
    /// Run many generated instances and aggregate them into one CSV.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ProblemArgs {
    /// Problem directory holding phi.mtx, s.csv and problem.json.
    #[arg(long)]
    pub dir: Option<PathBuf>,
    /// Dictionary file (.mtx for Matrix Market, anything else is CSV).
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    /// Signal file, one value per line or row.
    #[arg(long)]
    pub signal: Option<PathBuf>,
    /// Rescale loaded columns to unit norm.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long)]
    pub mode: Option<ConstraintMode>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Rows of a generated dictionary.
    #[arg(long)]
    pub m: Option<usize>,
    /// Columns of a generated dictionary.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub sparsity: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Generator seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ProblemArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let p = &mut cfg.problem;
        if self.dir.is_some() {
            p.dir.clone_from(&self.dir);
        }
        if self.matrix.is_some() {
            p.matrix.clone_from(&self.matrix);
        }
        if self.signal.is_some() {
            p.signal.clone_from(&self.signal);
        }
        p.normalize |= self.normalize;
        set(&mut p.m, self.m);
        set(&mut p.n, self.n);
        set(&mut p.sparsity, self.sparsity);
        set(&mut p.noise_sigma, self.noise);
        set(&mut p.seed, self.seed);
        if self.mode.is_some() {
            cfg.mode = self.mode;
        }
        if self.lambda1.is_some() {
            cfg.lambda1 = self.lambda1;
        }
        if self.lambda2.is_some() {
            cfg.lambda2 = self.lambda2;
        }
    }

    fn config(&self) -> RunConfig {
        let mut cfg = RunConfig::default();
        self.apply(&mut cfg);
        cfg
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default, Args)]
pub struct FlowArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long)]
    pub scheme: Option<Scheme>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub tmax: Option<f64>,
    /// Record every k-th step in the trace.
    #[arg(long)]
    pub record_every: Option<usize>,
    /// Include the state vector in every trace row.
    #[arg(long)]
    pub snapshot_u: bool,
    /// Field-norm threshold for early stopping.
    #[arg(long)]
    pub converge_tol: Option<f64>,
    #[arg(long)]
    pub u0: Option<U0Kind>,
    #[arg(long)]
    pub u0_seed: Option<u64>,
    #[arg(long)]
    pub u0_scale: Option<f64>,
    #[arg(long)]
    pub no_oracle: bool,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub oracle_tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub gap_tol: Option<f64>,
    #[arg(long)]
    pub kkt_tol: Option<f64>,
}

impl FlowArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        self.problem.apply(&mut cfg);
        let i = &mut cfg.integrator;
        set(&mut i.scheme, self.scheme);
        set(&mut i.dt, self.dt);
        set(&mut i.t_max, self.tmax);
        set(&mut i.record_every, self.record_every);
        i.snapshot_u |= self.snapshot_u;
        set(&mut i.converge_tol, self.converge_tol);
        set(&mut cfg.u0.kind, self.u0);
        set(&mut cfg.u0.seed, self.u0_seed);
        set(&mut cfg.u0.scale, self.u0_scale);
        if self.no_oracle {
            cfg.oracle.enabled = false;
        }
        set(&mut cfg.oracle.method, self.method);
        set(&mut cfg.oracle.tol, self.oracle_tol);
        set(&mut cfg.oracle.max_iter, self.max_iter);
        set(&mut cfg.tolerances.gap, self.gap_tol);
        set(&mut cfg.tolerances.kkt, self.kkt_tol);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub flow: FlowArgs,
    /// Directory for the problem, final states, trace and report.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Trace CSV path (defaults to trace.csv inside --out).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Report JSON path (defaults to report.json inside --out).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Omit wall-clock timings so identical runs give identical bytes.
    #[arg(long)]
    pub canonical: bool,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, default_value = "fista")]
    pub method: Method,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 200_000)]
    pub max_iter: usize,
    /// Directory for a_star.csv and oracle.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub canonical: bool,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Coefficient vector to certify.
    #[arg(long = "a")]
    pub a: PathBuf,
    /// Optional LCA state; checked for F(u) = 0 and T(u) = a.
    #[arg(long = "u")]
    pub u: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Write the certificate here as well as to stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub flow: FlowArgs,
    /// Seeds as a list (`0,3,7`) or half-open range (`0..10`).
    #[arg(long, default_value = "")]
    pub seeds: String,
    /// Sizes as `MxN`, comma separated.
    #[arg(long, default_value = "20x40")]
    pub sizes: String,
    /// Aggregate CSV path; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, env = "LCA_LAB_THREADS")]
    pub threads: Option<usize>,
}

pub fn run(args: impl IntoIterator<Item = impl Into<OsString> + Clone>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Run(a) => cmd_run(&a),
        Command::Oracle(a) => cmd_oracle(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Sweep(a) => cmd_sweep(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn print_json(bytes: &[u8]) {
    print!("{}", String::from_utf8_lossy(bytes));
}

fn vector_file(path: &Path, v: &ndarray::Array1<f64>) -> Result<()> {
    write_atomic(path, &vector_to_csv_bytes(&v.to_vec()))
}

pub fn cmd_gen(args: &GenArgs) -> Result<i32> {
    let cfg = args.problem.config();
    if cfg.problem.dir.is_some() || cfg.problem.matrix.is_some() {
        return Err(LcaError::Config("gen only draws new problems".into()));
    }
    let built = cfg.build_problem()?;
    let meta = ProblemMeta {
        mode: built.problem.mode(),
        lambda1: built.problem.lambda1(),
        lambda2: built.problem.lambda2(),
        seed: built.seed,
        provenance: format!(
            "generated: m={} n={} sparsity={} noise_sigma={} seed={}",
            cfg.problem.m,
            cfg.problem.n,
            cfg.problem.sparsity,
            cfg.problem.noise_sigma,
            cfg.problem.seed
        ),
        column_scales: None,
    };
    save_problem(&built.problem, &args.out, &meta)?;
    if let Some(planted) = &built.planted {
        vector_file(&args.out.join("a_planted.csv"), planted)?;
    }
    println!("{}", built.problem.fingerprint());
    Ok(EXIT_OK)
}

fn write_run_outputs(exp: &mut Experiment, args: &RunArgs, cfg: &RunConfig) -> Result<()> {
    let out = args.out.clone().or_else(|| cfg.output_dir.clone());
    let files = &mut exp.report.files;
    if let Some(dir) = &out {
        fs::create_dir_all(dir)?;
        let problem_dir = dir.join("problem");
        let meta = ProblemMeta {
            mode: exp.problem.mode(),
            lambda1: exp.problem.lambda1(),
            lambda2: exp.problem.lambda2(),
            seed: exp.report.problem.seed,
            provenance: "copied by run".into(),
            column_scales: None,
        };
        save_problem(&exp.problem, &problem_dir, &meta)?;
        files.problem_dir = Some(problem_dir);
        let a_final = dir.join("a_final.csv");
        vector_file(&a_final, &exp.trace.final_state.a)?;
        files.a_final = Some(a_final);
        let u_final = dir.join("u_final.csv");
        vector_file(&u_final, &exp.trace.final_state.u)?;
        files.u_final = Some(u_final);
        if let Some(check) = &exp.oracle {
            let a_star = dir.join("a_star.csv");
            vector_file(&a_star, &check.from_zero.a_star())?;
            files.a_star = Some(a_star);
        }
    } else {
        files.matrix.clone_from(&cfg.problem.matrix);
        files.signal.clone_from(&cfg.problem.signal);
        files.problem_dir.clone_from(&cfg.problem.dir);
    }
    let trace_path = args
        .trace
        .clone()
        .or_else(|| out.as_ref().map(|d| d.join("trace.csv")));
    if let Some(path) = &trace_path {
        let mut bytes = Vec::new();
        exp.trace.write_csv(&mut bytes)?;
        write_atomic(path, &bytes)?;
        files.trace = Some(path.clone());
    }
    if args.canonical {
        exp.report.canonicalize();
    }
    let json = to_json(&exp.report)?;
    if let Some(path) = args
        .report
        .clone()
        .or_else(|| out.as_ref().map(|d| d.join("report.json")))
    {
        write_atomic(&path, &json)?;
    }
    print_json(&json);
    Ok(())
}

pub fn cmd_run(args: &RunArgs) -> Result<i32> {
    let cfg = args.flow.resolve()?;
    let mut exp = execute(&cfg)?;
    write_run_outputs(&mut exp, args, &cfg)?;
    let report = &exp.report;
    if let Some(d) = &report.flow.divergence {
        eprintln!(
            "flow diverged at step {} (t = {}, coordinate {})",
            d.step, d.t, d.index
        );
        return Ok(EXIT_NUMERICS);
    }
    Ok(if report.passed() {
        EXIT_OK
    } else {
        EXIT_FAILED
    })
}

#[derive(Debug, Serialize)]
struct OracleFile {
    fingerprint: String,
    #[serde(rename = "E_star")]
    e_star: f64,
    iterations: usize,
    method: Method,
    residual: f64,
    likely_unique: bool,
    uniqueness_distance: f64,
}

pub fn cmd_oracle(args: &OracleArgs) -> Result<i32> {
    let cfg = args.problem.config();
    let problem = cfg.build_problem()?.problem;
    if args.tol.is_nan() || args.tol <= 0.0 || args.max_iter == 0 {
        return Err(LcaError::Config(
            "tol must be positive and max_iter at least 1".into(),
        ));
    }
    let check: UniquenessCheck =
        lca_core::check_uniqueness(&problem, args.method, args.tol, args.max_iter)?;
    let best = &check.from_zero;
    fs::create_dir_all(&args.out)?;
    vector_file(&args.out.join("a_star.csv"), &best.a_star())?;
    let json = to_json(&OracleFile {
        fingerprint: problem.fingerprint(),
        e_star: best.e_star,
        iterations: best.iterations,
        method: best.method,
        residual: best.final_residual,
        likely_unique: check.likely_unique,
        uniqueness_distance: check.distance,
    })?;
    write_atomic(&args.out.join("oracle.json"), &json)?;
    print_json(&json);
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct StateCheck {
    field_norm: f64,
    /// `‖θ(u) − a‖∞`.
    output_mismatch: f64,
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    fingerprint: String,
    tolerance: f64,
    verdict: Verdict,
    kkt: OptimalityCertificate,
    fixed_region: FixedRegionReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    lifted_u: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    state: Option<StateCheck>,
}

fn verify(
    problem: &Problem,
    a: &ndarray::Array1<f64>,
    u: Option<&ndarray::Array1<f64>>,
    tol: f64,
) -> Result<VerifyReport> {
    let act = Activation::for_problem(problem);
    let kkt = kkt_certificate(problem, a.view(), tol)?;
    let fixed_region = fixed_region_residual(problem, &act, a.view(), DIAGNOSTIC_ZERO_TOL)?;
    let lifted_u = if kkt.passed() {
        lift_solution(problem, &act, a.view())
            .ok()
            .map(|u| u.to_vec())
    } else {
        None
    };
    let state = u
        .map(|u| -> Result<StateCheck> {
            let f = field(problem, &act, u.view())?;
            let out = act.theta_vec(u.view());
            Ok(StateCheck {
                field_norm: f.dot(&f).sqrt(),
                output_mismatch: out
                    .iter()
                    .zip(a.iter())
                    .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs())),
            })
        })
        .transpose()?;
    let pass = kkt.passed()
        && fixed_region.passes(tol)
        && state
            .as_ref()
            .is_none_or(|s| s.field_norm <= tol && s.output_mismatch <= tol);
    Ok(VerifyReport {
        fingerprint: problem.fingerprint(),
        tolerance: tol,
        verdict: if pass { Verdict::Pass } else { Verdict::Fail },
        kkt,
        fixed_region,
        lifted_u,
        state,
    })
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<i32> {
    if args.tol.is_nan() || args.tol <= 0.0 {
        return Err(LcaError::Config(format!(
            "tol must be positive, got {}",
            args.tol
        )));
    }
    let cfg = args.problem.config();
    let problem = cfg.build_problem()?.problem;
    let a = read_vector_file(&args.a)?;
    let u = args.u.as_deref().map(read_vector_file).transpose()?;
    let report = verify(&problem, &a, u.as_ref(), args.tol)?;
    let json = to_json(&report)?;
    if let Some(path) = &args.report {
        write_atomic(path, &json)?;
    }
    print_json(&json);
    Ok(if report.verdict == Verdict::Pass {
        EXIT_OK
    } else {
        EXIT_FAILED
    })
}

/// Parses `0,3,7` or `0..10`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let text = text.trim();
    if text.is_empty() {
        return Err(LcaError::Config("the seed list is empty".into()));
    }
    let bad = |s: &str| LcaError::Config(format!("bad seed list `{s}`"));
    let seeds: Vec<u64> = if let Some((lo, hi)) = text.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| bad(text))?;
        let hi: u64 = hi.trim().parse().map_err(|_| bad(text))?;
        (lo..hi).collect()
    } else {
        text.split(',')
            .map(|s| s.trim().parse().map_err(|_| bad(text)))
            .collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(LcaError::Config("the seed list is empty".into()));
    }
    Ok(seeds)
}

/// Parses `20x40,40x80`.
pub fn parse_sizes(text: &str) -> Result<Vec<(usize, usize)>> {
    let bad = || LcaError::Config(format!("bad size list `{text}`"));
    let sizes: Vec<(usize, usize)> = text
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            let (m, n) = s.trim().split_once('x').ok_or_else(bad)?;
            Ok((m.parse().map_err(|_| bad())?, n.parse().map_err(|_| bad())?))
        })
        .collect::<Result<_>>()?;
    if sizes.is_empty() {
        return Err(bad());
    }
    Ok(sizes)
}

#[derive(Debug, Serialize)]
struct SweepRow {
    seed: u64,
    m: usize,
    n: usize,
    mode: ConstraintMode,
    status: String,
    steps: Option<usize>,
    t_final: Option<f64>,
    #[serde(rename = "V_final")]
    v_final: Option<f64>,
    #[serde(rename = "E_star")]
    e_star: Option<f64>,
    gap: Option<f64>,
    kkt_residual: Option<f64>,
    oracle_iterations: Option<usize>,
    likely_unique: Option<bool>,
    solution_error: Option<f64>,
    verdict: Verdict,
    error: String,
}

fn sweep_row(
    seed: u64,
    m: usize,
    n: usize,
    mode: ConstraintMode,
    outcome: Result<ExperimentReport>,
) -> SweepRow {
    let mut row = SweepRow {
        seed,
        m,
        n,
        mode,
        status: String::new(),
        steps: None,
        t_final: None,
        v_final: None,
        e_star: None,
        gap: None,
        kkt_residual: None,
        oracle_iterations: None,
        likely_unique: None,
        solution_error: None,
        verdict: Verdict::Fail,
        error: String::new(),
    };
    match outcome {
        Ok(r) => {
            row.status = serde_json::to_value(r.flow.status)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default();
            row.steps = Some(r.flow.steps);
            row.t_final = Some(r.flow.t_final);
            row.v_final = Some(r.flow.v_final);
            row.gap = r.flow.e_star_gap;
            row.kkt_residual = Some(r.flow.kkt_residual);
            row.solution_error = r.flow.solution_error;
            if let Some(o) = &r.oracle {
                row.e_star = Some(o.e_star);
                row.oracle_iterations = Some(o.iterations);
                row.likely_unique = Some(o.likely_unique);
            }
            row.verdict = r.verdict;
        }
        Err(e) => {
            row.status = "error".into();
            row.error = e.to_string();
        }
    }
    row
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<i32> {
    let seeds = parse_seeds(&args.seeds)?;
    let sizes = parse_sizes(&args.sizes)?;
    let base = args.flow.resolve()?;
    if base.problem.dir.is_some() || base.problem.matrix.is_some() {
        return Err(LcaError::Config(
            "sweep only runs generated problems".into(),
        ));
    }
    if args.threads == Some(0) {
        return Err(LcaError::Config(
            "LCA_LAB_THREADS must be at least 1".into(),
        ));
    }
    let mut jobs: Vec<(u64, usize, usize)> = seeds
        .iter()
        .flat_map(|&s| sizes.iter().map(move |&(m, n)| (s, m, n)))
        .collect();
    jobs.sort_unstable();
    jobs.dedup();

    let mode = base.mode.unwrap_or(ConstraintMode::Lasso);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads.unwrap_or(0))
        .build()
        .map_err(|e| LcaError::Config(format!("thread pool: {e}")))?;
    let rows: Vec<(SweepRow, bool)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(seed, m, n)| {
                let mut cfg = base.clone();
                cfg.problem.seed = seed;
                cfg.problem.m = m;
                cfg.problem.n = n;
                cfg.output_dir = None;
                let outcome = execute(&cfg).map(|exp| exp.report);
                let diverged = matches!(&outcome, Ok(r) if r.flow.divergence.is_some());
                (sweep_row(seed, m, n, mode, outcome), diverged)
            })
            .collect()
    });

    let mut writer = csv::Writer::from_writer(Vec::new());
    for (row, _) in &rows {
        writer.serialize(row)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| LcaError::Format(e.to_string()))?;
    match &args.output {
        Some(path) => write_atomic(path, &bytes)?,
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }

    let failed = rows
        .iter()
        .filter(|(r, _)| r.verdict != Verdict::Pass)
        .count();
    eprintln!("sweep: {} runs, {failed} failed", rows.len());
    Ok(if rows.iter().any(|(_, d)| *d) {
        EXIT_NUMERICS
    } else if failed > 0 {
        EXIT_FAILED
    } else {
        EXIT_OK
    })
}
