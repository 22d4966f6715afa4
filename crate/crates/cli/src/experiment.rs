//! One oracle-plus-flow experiment and its report.

use std::path::PathBuf;
use std::time::Instant;

use lca_core::{
    check_uniqueness, kkt_certificate, lift_solution, run_flow, Activation, ConstraintMode,
    FlowStatus, FlowTrace, IntegratorConfig, LcaError, Method, Problem, Result, UniquenessCheck,
    Verdict,
};
use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Tolerances, U0Kind, U0Spec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInfo {
    pub m: usize,
    pub n: usize,
    pub mode: ConstraintMode,
    pub lambda1: f64,
    pub lambda2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub method: Method,
    #[serde(rename = "E_star")]
    pub e_star: f64,
    pub iterations: usize,
    pub residual: f64,
    pub likely_unique: bool,
    pub uniqueness_distance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub step: usize,
    pub t: f64,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub status: FlowStatus,
    pub steps: usize,
    pub t_final: f64,
    #[serde(rename = "V_final")]
    pub v_final: f64,
    /// Largest of the stationarity, complementarity and feasibility residuals
    /// of `T(u_final)`.
    pub kkt_residual: f64,
    #[serde(rename = "E_star_gap", skip_serializing_if = "Option::is_none")]
    pub e_star_gap: Option<f64>,
    /// `‖T(u_final) − a*‖∞`, reported only when the oracle found the optimum
    /// likely unique.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solution_error: Option<f64>,
    pub descent_violations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub divergence: Option<Divergence>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportFiles {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub problem_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signal: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_final: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_final: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_star: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub fingerprint: String,
    pub problem: ProblemInfo,
    pub integrator: IntegratorConfig,
    pub u0: U0Spec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSummary>,
    pub flow: FlowReport,
    pub tolerances: Tolerances,
    pub verdict: Verdict,
    pub files: ReportFiles,
}

impl ExperimentReport {
    /// Drops fields that vary between identical runs.
    pub fn canonicalize(&mut self) {
        self.flow.wall_time = None;
        if let Some(o) = &mut self.oracle {
            o.wall_time = None;
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// Everything produced by [`execute`], kept in memory until the caller
/// decides what to write.
pub struct Experiment {
    pub problem: Problem,
    pub report: ExperimentReport,
    pub trace: FlowTrace,
    pub oracle: Option<UniquenessCheck>,
    pub planted: Option<Array1<f64>>,
}

impl Experiment {
    pub fn diverged(&self) -> bool {
        self.trace.status == FlowStatus::Diverged
    }

    pub fn a_final(&self) -> &Array1<f64> {
        &self.trace.final_state.a
    }

    pub fn u_final(&self) -> &Array1<f64> {
        &self.trace.final_state.u
    }
}

fn oracle_summary(check: &UniquenessCheck, wall_time: f64) -> OracleSummary {
    let best = &check.from_zero;
    OracleSummary {
        method: best.method,
        e_star: best.e_star,
        iterations: best.iterations,
        residual: best.final_residual,
        likely_unique: check.likely_unique,
        uniqueness_distance: check.distance,
        wall_time: Some(wall_time),
    }
}

fn max_abs_diff(x: &Array1<f64>, y: &Array1<f64>) -> f64 {
    x.iter()
        .zip(y.iter())
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
}

/// Runs the oracle (when enabled) and the flow, and grades the result.
///
/// A diverged flow is not an error here: the experiment carries the partial
/// trace and a report citing the failing step.
pub fn execute(cfg: &RunConfig) -> Result<Experiment> {
    cfg.validate()?;
    let built = cfg.build_problem()?;
    let problem = built.problem;
    let act = Activation::for_problem(&problem);

    let (oracle, oracle_time) = if cfg.oracle.enabled {
        let start = Instant::now();
        let check = check_uniqueness(
            &problem,
            cfg.oracle.method,
            cfg.oracle.tol,
            cfg.oracle.max_iter,
        )?;
        (Some(check), start.elapsed().as_secs_f64())
    } else {
        (None, 0.0)
    };

    let u0 = match (cfg.u0.kind, &oracle) {
        (U0Kind::Lifted, Some(check)) => {
            lift_solution(&problem, &act, check.from_zero.a_star().view())?
        }
        (U0Kind::Lifted, None) => {
            return Err(LcaError::Config(
                "a lifted start needs the oracle solution".into(),
            ))
        }
        _ => cfg.u0.draw(problem.n()),
    };

    let start = Instant::now();
    let (trace, divergence) = match run_flow(&problem, &act, u0.view(), &cfg.integrator) {
        Ok(trace) => (trace, None),
        Err(LcaError::Numerics {
            step,
            t,
            index,
            partial: Some(partial),
        }) => (*partial, Some(Divergence { step, t, index })),
        Err(e) => return Err(e),
    };
    let flow_time = start.elapsed().as_secs_f64();

    let tol = &cfg.tolerances;
    let a_final = &trace.final_state.a;
    let cert = kkt_certificate(&problem, a_final.view(), tol.kkt)?;
    let kkt_residual = cert
        .stationarity_residual
        .max(cert.complementarity_residual)
        .max(cert.feasibility_violation);
    let last = trace.last();
    let e_star_gap = oracle.as_ref().map(|c| (last.v - c.from_zero.e_star).abs());
    let solution_error = oracle
        .as_ref()
        .filter(|c| c.likely_unique)
        .map(|c| max_abs_diff(a_final, &c.from_zero.a_star()));
    let descent_violations = trace.descent_violations(cfg.integrator.dt).len();

    let pass = divergence.is_none()
        && cert.passed()
        && e_star_gap.is_none_or(|g| g <= tol.gap)
        && descent_violations == 0;

    let report = ExperimentReport {
        fingerprint: problem.fingerprint(),
        problem: ProblemInfo {
            m: problem.m(),
            n: problem.n(),
            mode: problem.mode(),
            lambda1: problem.lambda1(),
            lambda2: problem.lambda2(),
            seed: built.seed,
        },
        integrator: cfg.integrator.clone(),
        u0: cfg.u0.clone(),
        oracle: oracle.as_ref().map(|c| oracle_summary(c, oracle_time)),
        flow: FlowReport {
            status: trace.status,
            steps: trace.steps,
            t_final: last.t,
            v_final: last.v,
            kkt_residual,
            e_star_gap,
            solution_error,
            descent_violations,
            divergence,
            wall_time: Some(flow_time),
        },
        tolerances: tol.clone(),
        verdict: if pass { Verdict::Pass } else { Verdict::Fail },
        files: ReportFiles::default(),
    };

    Ok(Experiment {
        problem,
        report,
        trace,
        oracle,
        planted: built.planted,
    })
}
