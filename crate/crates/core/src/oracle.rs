//! Proximal-gradient reference solvers.
//!
//! These are deliberately independent of the LCA flow: they iterate the
//! forward-backward map `a ↦ prox(a − η Φᵀ(Φa − s))` on the problem's
//! objective and serve as ground truth for `a*` and `E*`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::activation::{Activation, ActivationKind};
use crate::error::{LcaError, Result};
use crate::problem::{objective, Problem};

/// Power-iteration cap for the Lipschitz estimate.
pub const POWER_ITERATIONS: usize = 200;
/// Relative change that ends power iteration early.
pub const POWER_TOL: f64 = 1e-10;
/// Step size as a fraction of `1/L`.
pub const STEP_FRACTION: f64 = 0.99;
/// Two solves agreeing to this in ℓ∞ flag the optimum as likely unique.
pub const UNIQUENESS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ista,
    Fista,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Ista => "ista",
            Method::Fista => "fista",
        })
    }
}

impl FromStr for Method {
    type Err = LcaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ista" => Ok(Method::Ista),
            "fista" => Ok(Method::Fista),
            other => Err(LcaError::Config(format!("unknown oracle method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub a_star: Vec<f64>,
    #[serde(rename = "E_star")]
    pub e_star: f64,
    pub iterations: usize,
    /// `‖a⁺ − y‖∞ / η` at the last iteration.
    pub final_residual: f64,
    pub method: Method,
}

impl OracleResult {
    pub fn a_star(&self) -> Array1<f64> {
        Array1::from(self.a_star.clone())
    }
}

/// Largest eigenvalue of `ΦᵀΦ` by power iteration from the all-ones vector.
pub fn lipschitz_constant(problem: &Problem) -> f64 {
    let g = problem.gram_minus_identity();
    let apply = |x: &Array1<f64>| g.dot(x) + x;
    let n = problem.n();
    let mut x = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut estimate = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let y = apply(&x);
        let next = x.dot(&y);
        let norm = y.dot(&y).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        x = y / norm;
        let done = (next - estimate).abs() <= POWER_TOL * next.abs();
        estimate = next;
        if done {
            break;
        }
    }
    // The Rayleigh quotient approaches L from below; one more product
    // tightens the last estimate.
    let y = apply(&x);
    estimate.max(x.dot(&y))
}

/// Forward-backward operator for one problem.
#[derive(Debug, Clone)]
pub struct ProxGradient<'p> {
    problem: &'p Problem,
    lipschitz: f64,
}

impl<'p> ProxGradient<'p> {
    pub fn new(problem: &'p Problem) -> Self {
        ProxGradient {
            problem,
            lipschitz: lipschitz_constant(problem),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Default step `0.99/L`.
    pub fn default_step(&self) -> f64 {
        STEP_FRACTION / self.lipschitz
    }

    /// Proximal map of `η·(λ1‖·‖₁ + λ2‖·‖²)` plus the constraint, which is
    /// the problem's own threshold family at weights `(ηλ1, ηλ2)`.
    pub fn prox_operator(&self, eta: f64) -> Result<Activation> {
        let kind = ActivationKind::for_mode(self.problem.mode());
        Activation::new(
            kind,
            eta * self.problem.lambda1(),
            eta * self.problem.lambda2(),
        )
    }

    /// One proximal-gradient step from `a` with step size `eta`.
    pub fn prox_step(&self, a: ArrayView1<'_, f64>, eta: f64) -> Result<Array1<f64>> {
        // Allow round-off in L when the caller passes exactly 1/L.
        if !(eta > 0.0 && eta * self.lipschitz <= 1.0 + 1e-9) {
            return Err(LcaError::Config(format!(
                "step size {eta} outside (0, 1/L] with L = {}",
                self.lipschitz
            )));
        }
        self.problem.check_len("coefficient vector", a)?;
        let prox = self.prox_operator(eta)?;
        Ok(self.forward_backward(&prox, a, eta))
    }

    fn forward_backward(&self, prox: &Activation, a: ArrayView1<'_, f64>, eta: f64) -> Array1<f64> {
        let p = self.problem;
        let fit = p.phi().dot(&a) - p.signal();
        let grad = p.phi().t().dot(&fit);
        let z = &a - &(grad * eta);
        prox.theta_vec(z.view())
    }

    /// Runs ISTA or FISTA (with restart whenever the objective increases)
    /// from `start` until `‖a⁺ − y‖∞/η ≤ tol`.
    pub fn solve_from(
        &self,
        start: ArrayView1<'_, f64>,
        method: Method,
        tol: f64,
        max_iter: usize,
    ) -> Result<OracleResult> {
        if tol.is_nan() || tol <= 0.0 {
            return Err(LcaError::Config(format!(
                "oracle tolerance must be positive, got {tol}"
            )));
        }
        let p = self.problem;
        p.check_len("oracle start", start)?;
        let eta = self.default_step();
        let prox = self.prox_operator(eta)?;

        let mut a = start.to_owned();
        let mut e = objective(p, a.view())?;
        let mut y = a.clone();
        let mut momentum = 1.0_f64;
        let mut residual = f64::INFINITY;
        let mut best = (e, a.clone());

        for iter in 1..=max_iter {
            let mut next = self.forward_backward(&prox, y.view(), eta);
            let mut e_next = objective(p, next.view())?;
            if method == Method::Fista && e_next > e {
                // Restart from the last iterate with a plain proximal step.
                momentum = 1.0;
                y = a.clone();
                next = self.forward_backward(&prox, y.view(), eta);
                e_next = objective(p, next.view())?;
            }
            residual = max_abs_diff(next.view(), y.view()) / eta;

            match method {
                Method::Ista => y = next.clone(),
                Method::Fista => {
                    let m_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
                    let beta = (momentum - 1.0) / m_next;
                    y = &next + &((&next - &a) * beta);
                    momentum = m_next;
                }
            }
            a = next;
            e = e_next;
            if e < best.0 {
                best = (e, a.clone());
            }

            if residual <= tol {
                return Ok(OracleResult {
                    e_star: objective(p, a.view())?,
                    a_star: a.to_vec(),
                    iterations: iter,
                    final_residual: residual,
                    method,
                });
            }
        }

        Err(LcaError::NonConverged {
            iterations: max_iter,
            residual,
            best: Box::new(OracleResult {
                a_star: best.1.to_vec(),
                e_star: best.0,
                iterations: max_iter,
                final_residual: residual,
                method,
            }),
        })
    }
}

fn max_abs_diff(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    x.iter()
        .zip(y.iter())
        .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()))
}

/// Solves from `a = 0`.
pub fn solve(problem: &Problem, method: Method, tol: f64, max_iter: usize) -> Result<OracleResult> {
    ProxGradient::new(problem).solve_from(Array1::zeros(problem.n()).view(), method, tol, max_iter)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessCheck {
    pub likely_unique: bool,
    /// ℓ∞ distance between the two solutions.
    pub distance: f64,
    pub from_zero: OracleResult,
    pub from_threshold: OracleResult,
}

/// Solves from `a = 0` and from `a = θ(b)` and compares the results. An
/// agreement within [`UNIQUENESS_TOL`] is evidence, not proof, that the
/// optimum is unique.
pub fn check_uniqueness(
    problem: &Problem,
    method: Method,
    tol: f64,
    max_iter: usize,
) -> Result<UniquenessCheck> {
    let solver = ProxGradient::new(problem);
    let act = Activation::for_problem(problem);
    let from_zero = solver.solve_from(Array1::zeros(problem.n()).view(), method, tol, max_iter)?;
    let start = act.theta_vec(problem.b().view());
    let from_threshold = solver.solve_from(start.view(), method, tol, max_iter)?;
    let distance = max_abs_diff(
        ArrayView1::from(&from_zero.a_star),
        ArrayView1::from(&from_threshold.a_star),
    );
    Ok(UniquenessCheck {
        likely_unique: distance <= UNIQUENESS_TOL,
        distance,
        from_zero,
        from_threshold,
    })
}
