//! LCA vector field, Lyapunov pair and time integration.
//!
//! The flow is `u̇ = F(u) = b − u − (ΦᵀΦ − I)·θ(u)` and the output is
//! `a = θ(u)`. `V(u) = E(θ(u))` is the objective evaluated at the output,
//! and `W(u) = −Σ_{a_n ≠ 0} θ'(u_n)·F_n(u)²` is its time derivative along
//! flows wherever no coordinate is crossing a threshold.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1, Zip};
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{LcaError, Result};
use crate::optimality::fixed_region_residual;
use crate::problem::{objective, support_sets, Problem, DIAGNOSTIC_ZERO_TOL};

/// Default early-stop threshold on `‖F(u)‖₂`.
pub const DEFAULT_CONVERGE_TOL: f64 = 1e-10;

/// Consecutive records below the field tolerance needed to stop early.
pub const CONVERGE_STREAK: usize = 3;

/// Tolerance on active-set stationarity for [`analytic_region_flow`].
pub const REGION_STATIONARITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "euler")]
    ExplicitEuler,
    #[serde(rename = "rk4")]
    Rk4,
    #[serde(rename = "expeuler")]
    ExponentialEuler,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::ExplicitEuler => "euler",
            Scheme::Rk4 => "rk4",
            Scheme::ExponentialEuler => "expeuler",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = LcaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Scheme::ExplicitEuler),
            "rk4" => Ok(Scheme::Rk4),
            "expeuler" | "exp-euler" => Ok(Scheme::ExponentialEuler),
            other => Err(LcaError::Config(format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub dt: f64,
    pub t_max: f64,
    pub record_every: usize,
    pub snapshot_u: bool,
    /// Early stop once `‖F(u)‖₂` stays at or below this for
    /// [`CONVERGE_STREAK`] consecutive records.
    pub converge_tol: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            scheme: Scheme::ExponentialEuler,
            dt: 0.01,
            t_max: 50.0,
            record_every: 1,
            snapshot_u: false,
            converge_tol: DEFAULT_CONVERGE_TOL,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0 && self.dt <= 1.0) {
            return Err(LcaError::Config(format!(
                "dt must lie in (0, 1], got {}",
                self.dt
            )));
        }
        if !(self.t_max.is_finite() && self.t_max > 0.0) {
            return Err(LcaError::Config(format!(
                "t_max must be positive, got {}",
                self.t_max
            )));
        }
        if self.record_every == 0 {
            return Err(LcaError::Config("record_every must be at least 1".into()));
        }
        if self.converge_tol.is_nan() || self.converge_tol < 0.0 {
            return Err(LcaError::Config(format!(
                "converge_tol must be non-negative, got {}",
                self.converge_tol
            )));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        ((self.t_max / self.dt).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub u: Array1<f64>,
    /// `θ(u)`, kept in sync with `u`.
    pub a: Array1<f64>,
}

impl FlowState {
    pub fn new(act: &Activation, t: f64, u: Array1<f64>) -> Self {
        let a = act.theta_vec(u.view());
        FlowState { t, u, a }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub t: f64,
    #[serde(rename = "V")]
    pub v: f64,
    #[serde(rename = "W")]
    pub w: f64,
    pub field_norm: f64,
    pub kkt_residual: f64,
    pub active_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowStatus {
    /// `‖F(u)‖` fell below tolerance before `t_max`.
    Converged,
    /// Integrated to `t_max` without meeting the field tolerance.
    Completed,
    /// A non-finite state stopped the run.
    Diverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrace {
    pub records: Vec<TraceRecord>,
    pub status: FlowStatus,
    pub steps: usize,
    pub final_state: FlowState,
}

/// Machine-readable summary of one flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub status: FlowStatus,
    pub t_final: f64,
    #[serde(rename = "V_final")]
    pub v_final: f64,
    #[serde(rename = "E_star_gap", skip_serializing_if = "Option::is_none")]
    pub e_star_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

/// A recorded pair `(k, k+1)` where V rose by more than the integrator budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentViolation {
    pub record: usize,
    pub t: f64,
    pub increase: f64,
    pub allowed: f64,
}

impl FlowTrace {
    pub fn last(&self) -> &TraceRecord {
        self.records
            .last()
            .expect("a trace always holds the initial record")
    }

    pub fn summary(&self, e_star: Option<f64>, wall_time: Option<f64>) -> FlowSummary {
        let last = self.last();
        FlowSummary {
            status: self.status,
            t_final: last.t,
            v_final: last.v,
            e_star_gap: e_star.map(|e| (last.v - e).abs()),
            wall_time,
        }
    }

    /// Checks `V(t_{k+1}) ≤ V(t_k) + s·10·dt²·(1 + |V(t_k)|)` over recorded
    /// pairs, where `s` is the number of steps between the two records.
    pub fn descent_violations(&self, dt: f64) -> Vec<DescentViolation> {
        self.records
            .windows(2)
            .enumerate()
            .filter_map(|(k, w)| {
                let steps = (w[1].step - w[0].step) as f64;
                let allowed = steps * descent_budget(dt, w[0].v);
                let increase = w[1].v - w[0].v;
                (increase > allowed).then(|| DescentViolation {
                    record: k + 1,
                    t: w[1].t,
                    increase,
                    allowed,
                })
            })
            .collect()
    }

    /// Writes the trace as CSV: `t,V,W,field_norm,kkt_residual,active_count`
    /// followed by `u_0..u_{N-1}` when snapshots were recorded.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let n_u = self
            .records
            .first()
            .and_then(|r| r.u.as_ref())
            .map_or(0, Vec::len);
        let mut header: Vec<String> = ["t", "V", "W", "field_norm", "kkt_residual", "active_count"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((0..n_u).map(|i| format!("u_{i}")));
        writer.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                format!("{:e}", r.t),
                format!("{:e}", r.v),
                format!("{:e}", r.w),
                format!("{:e}", r.field_norm),
                format!("{:e}", r.kkt_residual),
                r.active_count.to_string(),
            ];
            if let Some(u) = &r.u {
                row.extend(u.iter().map(|v| format!("{v:e}")));
            }
            writer.write_record(&row)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Per-step allowance for V increases: `10·dt²·(1 + |V|)`.
pub fn descent_budget(dt: f64, v: f64) -> f64 {
    10.0 * dt * dt * (1.0 + v.abs())
}

/// `(ΦᵀΦ − I)·a`, summing only over nonzero `a_n`.
fn inhibition(problem: &Problem, a: ArrayView1<'_, f64>) -> Array1<f64> {
    let g = problem.gram_minus_identity();
    let mut out = Array1::zeros(a.len());
    for (n, &an) in a.iter().enumerate() {
        if an != 0.0 {
            // Symmetric, so row n is column n.
            out.scaled_add(an, &g.row(n));
        }
    }
    out
}

fn field_at(problem: &Problem, u: ArrayView1<'_, f64>, a: ArrayView1<'_, f64>) -> Array1<f64> {
    let mut f = problem.b() - &u;
    f -= &inhibition(problem, a);
    f
}

/// `F(u) = b − u − (ΦᵀΦ − I)θ(u)`.
pub fn field(problem: &Problem, act: &Activation, u: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    problem.check_len("state vector", u)?;
    let a = act.theta_vec(u);
    Ok(field_at(problem, u, a.view()))
}

/// `V(u) = E(θ(u))`.
pub fn lyapunov_v(problem: &Problem, act: &Activation, u: ArrayView1<'_, f64>) -> Result<f64> {
    problem.check_len("state vector", u)?;
    objective(problem, act.theta_vec(u).view())
}

fn w_from_parts(act: &Activation, a: ArrayView1<'_, f64>, f: ArrayView1<'_, f64>) -> f64 {
    let sum: f64 = a
        .iter()
        .zip(f.iter())
        .filter(|(an, _)| **an != 0.0)
        .map(|(_, fnv)| fnv * fnv)
        .sum();
    -act.active_slope() * sum
}

/// `W(u) = −θ'·Σ_{θ(u_n) ≠ 0} F_n(u)²`; zero when no coordinate is active.
/// The active set uses exact nonzero tests, without a tolerance.
pub fn lyapunov_w(problem: &Problem, act: &Activation, u: ArrayView1<'_, f64>) -> Result<f64> {
    problem.check_len("state vector", u)?;
    let a = act.theta_vec(u);
    let f = field_at(problem, u, a.view());
    Ok(w_from_parts(act, a.view(), f.view()))
}

fn ensure_finite(u: &Array1<f64>, step: usize, t: f64) -> Result<()> {
    match u.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(index) => Err(LcaError::Numerics {
            step,
            t,
            index,
            partial: None,
        }),
    }
}

fn advance(
    problem: &Problem,
    act: &Activation,
    state: &FlowState,
    scheme: Scheme,
    dt: f64,
) -> Array1<f64> {
    let u = state.u.view();
    match scheme {
        Scheme::ExplicitEuler => {
            let f = field_at(problem, u, state.a.view());
            &u + &(f * dt)
        }
        Scheme::Rk4 => {
            let eval = |x: &Array1<f64>| {
                let ax = act.theta_vec(x.view());
                field_at(problem, x.view(), ax.view())
            };
            let k1 = field_at(problem, u, state.a.view());
            let k2 = eval(&(&u + &(&k1 * (0.5 * dt))));
            let k3 = eval(&(&u + &(&k2 * (0.5 * dt))));
            let k4 = eval(&(&u + &(&k3 * dt)));
            let mut next = u.to_owned();
            Zip::from(&mut next)
                .and(&k1)
                .and(&k2)
                .and(&k3)
                .and(&k4)
                .for_each(|x, &a, &b, &c, &d| *x += dt / 6.0 * (a + 2.0 * b + 2.0 * c + d));
            next
        }
        Scheme::ExponentialEuler => {
            // u⁺ = e^{−dt}u + (1 − e^{−dt})g(u) with g = b − (ΦᵀΦ − I)θ(u),
            // written as u + (1 − e^{−dt})·F(u) so that fixed points map to
            // themselves bit for bit.
            let f = field_at(problem, u, state.a.view());
            let gain = -(-dt).exp_m1();
            &u + &(f * gain)
        }
    }
}

/// One integrator step of size `cfg.dt`.
pub fn step(
    problem: &Problem,
    act: &Activation,
    state: &FlowState,
    cfg: &IntegratorConfig,
) -> Result<FlowState> {
    cfg.validate()?;
    problem.check_len("state vector", state.u.view())?;
    let u = advance(problem, act, state, cfg.scheme, cfg.dt);
    let t = state.t + cfg.dt;
    ensure_finite(&u, 1, t)?;
    Ok(FlowState::new(act, t, u))
}

fn record(
    problem: &Problem,
    act: &Activation,
    state: &FlowState,
    step: usize,
    snapshot: bool,
) -> Result<TraceRecord> {
    let f = field_at(problem, state.u.view(), state.a.view());
    let kkt = fixed_region_residual(problem, act, state.a.view(), DIAGNOSTIC_ZERO_TOL)?;
    Ok(TraceRecord {
        step,
        t: state.t,
        v: objective(problem, state.a.view())?,
        w: w_from_parts(act, state.a.view(), f.view()),
        field_norm: f.dot(&f).sqrt(),
        kkt_residual: kkt.max_residual,
        active_count: support_sets(state.a.view(), DIAGNOSTIC_ZERO_TOL)
            .active
            .len(),
        u: snapshot.then(|| state.u.to_vec()),
    })
}

/// Integrates from `u0` to `cfg.t_max`, recording diagnostics every
/// `cfg.record_every` steps and at the final step.
///
/// The only early-stop rule is a small vector field: `‖F(u)‖₂ ≤
/// cfg.converge_tol` on three consecutive records. A stalled V is never
/// taken as evidence of convergence.
pub fn run_flow(
    problem: &Problem,
    act: &Activation,
    u0: ArrayView1<'_, f64>,
    cfg: &IntegratorConfig,
) -> Result<FlowTrace> {
    cfg.validate()?;
    problem.check_len("initial state", u0)?;
    ensure_finite(&u0.to_owned(), 0, 0.0)?;

    let total = cfg.steps();
    let mut state = FlowState::new(act, 0.0, u0.to_owned());
    let mut records = vec![record(problem, act, &state, 0, cfg.snapshot_u)?];
    let mut streak = usize::from(records[0].field_norm <= cfg.converge_tol);
    let mut status = FlowStatus::Completed;
    let mut k = 0;

    while k < total && streak < CONVERGE_STREAK {
        let u = advance(problem, act, &state, cfg.scheme, cfg.dt);
        k += 1;
        let t = k as f64 * cfg.dt;
        if let Err(LcaError::Numerics { index, .. }) = ensure_finite(&u, k, t) {
            let partial = FlowTrace {
                records,
                status: FlowStatus::Diverged,
                steps: k - 1,
                final_state: state,
            };
            return Err(LcaError::Numerics {
                step: k,
                t,
                index,
                partial: Some(Box::new(partial)),
            });
        }
        state = FlowState::new(act, t, u);

        if k % cfg.record_every == 0 || k == total {
            let rec = record(problem, act, &state, k, cfg.snapshot_u)?;
            if rec.field_norm <= cfg.converge_tol {
                streak += 1;
            } else {
                streak = 0;
            }
            records.push(rec);
        }
    }
    if streak >= CONVERGE_STREAK {
        status = FlowStatus::Converged;
    }

    Ok(FlowTrace {
        records,
        status,
        steps: k,
        final_state: state,
    })
}

/// Closed-form flow from a point `û` whose output `â = θ(û)` already
/// satisfies stationarity on its support.
///
/// Active coordinates stay put; each inactive coordinate relaxes as
/// `α_n − e^{−t}(α_n − û_n)` with `α_n = b_n − φ_nᵀΦâ`. This equals the true
/// flow for as long as every inactive coordinate stays inside θ⁻¹(0).
pub fn analytic_region_flow(
    problem: &Problem,
    act: &Activation,
    u_hat: ArrayView1<'_, f64>,
    t: f64,
) -> Result<Array1<f64>> {
    problem.check_len("state vector", u_hat)?;
    let a_hat = act.theta_vec(u_hat);
    let alpha = problem.correlation_residual(a_hat.view())?;
    let lambda2 = act.lambda2();
    let mut worst = 0.0_f64;
    for (n, &an) in a_hat.iter().enumerate() {
        if an != 0.0 {
            let slope = act.lambda1() * an.signum() + 2.0 * lambda2 * an;
            worst = worst.max((alpha[n] - slope).abs());
        }
    }
    if worst > REGION_STATIONARITY_TOL {
        return Err(LcaError::Domain(format!(
            "active-set stationarity violated by {worst:e}"
        )));
    }

    let decay = (-t).exp();
    Ok(Array1::from_shape_fn(u_hat.len(), |n| {
        if a_hat[n] != 0.0 {
            u_hat[n]
        } else {
            alpha[n] - decay * (alpha[n] - u_hat[n])
        }
    }))
}

/// Radius bounding every flow started at `u0`:
/// `‖u0‖ + ‖b‖ + ‖ΦᵀΦ − I‖·V(u0)/λ1`, with the Frobenius norm standing in
/// for the operator norm (it is never smaller).
pub fn flow_bound(problem: &Problem, act: &Activation, u0: ArrayView1<'_, f64>) -> Result<f64> {
    let v0 = lyapunov_v(problem, act, u0)?;
    let g = problem.gram_minus_identity();
    let g_norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    let b = problem.b();
    Ok(u0.dot(&u0).sqrt() + b.dot(b).sqrt() + g_norm * v0 / act.lambda1())
}
