//! Optimality certificates for candidate (C)LASSO / elastic-net solutions.
//!
//! Two independent characterizations are provided:
//!
//! * [`fixed_region_residual`] checks the fixed-region equations written in
//!   terms of the activation: on the support `b_n − φ_nᵀΦa` must equal the
//!   penalty slope, off the support θ of that correlation must vanish.
//! * [`kkt_certificate`] checks stationarity, complementarity and
//!   feasibility of the constrained convex program directly, using the
//!   subdifferential of the ℓ1 norm.
//!
//! [`lift_solution`] turns a certified optimum `a*` into an LCA fixed point
//! `u*` with `θ(u*) = a*`.
//!
//! All residuals are absolute.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{LcaError, Result};
use crate::problem::{support_sets, Problem, DIAGNOSTIC_ZERO_TOL};

/// Tolerance a candidate must meet before it can be lifted to a fixed point.
pub const LIFT_CERTIFICATE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedRegionReport {
    /// `(n, residual)` for every active coordinate.
    pub active_residuals: Vec<(usize, f64)>,
    /// `(n, residual)` for every inactive coordinate.
    pub inactive_residuals: Vec<(usize, f64)>,
    pub max_residual: f64,
    /// `max(0, −min a_n)` for non-negative modes, 0 otherwise.
    pub feasibility_violation: f64,
}

impl FixedRegionReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_residual <= tol && self.feasibility_violation <= tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityCertificate {
    pub stationarity_residual: f64,
    pub complementarity_residual: f64,
    pub feasibility_violation: f64,
    /// Multipliers of the constraints `a_n ≥ 0`; identically zero without them.
    pub multipliers: Vec<f64>,
    pub tolerance: f64,
    pub verdict: Verdict,
}

impl OptimalityCertificate {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

fn feasibility(problem: &Problem, a: ArrayView1<'_, f64>) -> f64 {
    if problem.mode().is_nonnegative() {
        a.iter().fold(0.0_f64, |acc, v| acc.max(-v))
    } else {
        0.0
    }
}

/// Residuals of the fixed-region equations at `a`.
///
/// Active rows: `|b_n − φ_nᵀΦa − λ1·sign(a_n) − 2λ2·a_n|`.
/// Inactive rows: `|θ(b_n − φ_nᵀΦa)|`.
pub fn fixed_region_residual(
    problem: &Problem,
    act: &Activation,
    a: ArrayView1<'_, f64>,
    zero_tol: f64,
) -> Result<FixedRegionReport> {
    let r = problem.correlation_residual(a)?;
    let support = support_sets(a, zero_tol);
    let lambda1 = act.lambda1();
    let lambda2 = act.lambda2();

    let active_residuals: Vec<(usize, f64)> = support
        .active
        .iter()
        .map(|&n| {
            let slope = lambda1 * a[n].signum() + 2.0 * lambda2 * a[n];
            (n, (r[n] - slope).abs())
        })
        .collect();
    let inactive_residuals: Vec<(usize, f64)> = support
        .inactive
        .iter()
        .map(|&n| (n, act.theta(r[n]).abs()))
        .collect();
    let max_residual = active_residuals
        .iter()
        .chain(&inactive_residuals)
        .fold(0.0_f64, |acc, &(_, v)| acc.max(v));

    Ok(FixedRegionReport {
        active_residuals,
        inactive_residuals,
        max_residual,
        feasibility_violation: feasibility(problem, a),
    })
}

/// KKT certificate of `a` for the problem's own mode and weights.
///
/// The support is recomputed with a zero tolerance of 1e-12. On a zero
/// coordinate the stationarity residual is the distance from the smooth
/// gradient to the scaled subdifferential `[−λ1, λ1]`; in non-negative modes
/// the multiplier absorbs any excess on the negative side.
pub fn kkt_certificate(
    problem: &Problem,
    a: ArrayView1<'_, f64>,
    tol: f64,
) -> Result<OptimalityCertificate> {
    let r = problem.correlation_residual(a)?;
    let support = support_sets(a, DIAGNOSTIC_ZERO_TOL);
    let lambda1 = problem.lambda1();
    let lambda2 = problem.lambda2();
    let nonneg = problem.mode().is_nonnegative();

    let mut multipliers = vec![0.0; problem.n()];
    let mut stationarity = 0.0_f64;
    for &n in &support.active {
        // Negative gradient of the smooth part (quadratic + ℓ2).
        let g = r[n] - 2.0 * lambda2 * a[n];
        stationarity = stationarity.max((g - lambda1 * a[n].signum()).abs());
    }
    for &n in &support.inactive {
        let g = r[n] - 2.0 * lambda2 * a[n];
        let excess = if nonneg {
            multipliers[n] = (-lambda1 - g).max(0.0);
            (g - lambda1).max(0.0)
        } else {
            (g.abs() - lambda1).max(0.0)
        };
        stationarity = stationarity.max(excess);
    }

    let (complementarity, feasibility_violation) = if nonneg {
        let comp = multipliers
            .iter()
            .zip(a.iter())
            .fold(0.0_f64, |acc, (mu, v)| acc.max((mu * v).abs()));
        (comp, feasibility(problem, a))
    } else {
        (0.0, 0.0)
    };

    let ok = stationarity <= tol && complementarity <= tol && feasibility_violation <= tol;
    Ok(OptimalityCertificate {
        stationarity_residual: stationarity,
        complementarity_residual: complementarity,
        feasibility_violation,
        multipliers,
        tolerance: tol,
        verdict: if ok { Verdict::Pass } else { Verdict::Fail },
    })
}

/// Lifts a certified optimum `a*` to an LCA fixed point `u*`.
///
/// Active coordinates use `θ⁻¹(a*_n)`. Inactive coordinates take the
/// correlation `b_n − φ_nᵀΦa*` projected onto θ⁻¹(0), so that `θ(u*) = a*`
/// holds exactly there and `F_n(u*)` equals the projection distance.
pub fn lift_solution(
    problem: &Problem,
    act: &Activation,
    a_star: ArrayView1<'_, f64>,
) -> Result<Array1<f64>> {
    let cert = kkt_certificate(problem, a_star, LIFT_CERTIFICATE_TOL)?;
    if !cert.passed() {
        return Err(LcaError::Domain(format!(
            "cannot lift a non-optimal point (stationarity {:e}, complementarity {:e}, feasibility {:e})",
            cert.stationarity_residual, cert.complementarity_residual, cert.feasibility_violation
        )));
    }
    let r = problem.correlation_residual(a_star)?;
    let support = support_sets(a_star, DIAGNOSTIC_ZERO_TOL);
    let mut u = Array1::zeros(problem.n());
    for &n in &support.active {
        u[n] = act.theta_inverse_active(a_star[n])?;
    }
    for &n in &support.inactive {
        u[n] = act.clamp_to_dead_zone(r[n]);
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::ConstraintMode;
    use ndarray::{arr1, Array2};

    fn identity_fixture() -> Problem {
        Problem::new(
            Array2::eye(2),
            arr1(&[2.0, 0.5]),
            1.0,
            0.0,
            ConstraintMode::Lasso,
        )
        .unwrap()
    }

    fn scalar_classo() -> Problem {
        Problem::new(
            Array2::eye(1),
            arr1(&[-3.0]),
            1.0,
            0.0,
            ConstraintMode::Classo,
        )
        .unwrap()
    }

    #[test]
    fn fixed_region_at_fixture_optimum() {
        let p = identity_fixture();
        let act = Activation::for_problem(&p);
        let rep = fixed_region_residual(&p, &act, arr1(&[1.0, 0.0]).view(), 0.0).unwrap();
        assert_eq!(rep.active_residuals, vec![(0, 0.0)]);
        assert_eq!(rep.inactive_residuals, vec![(1, 0.0)]);
        assert_eq!(rep.max_residual, 0.0);

        let rep = fixed_region_residual(&p, &act, arr1(&[0.5, 0.0]).view(), 0.0).unwrap();
        assert_eq!(rep.active_residuals, vec![(0, 0.5)]);
        assert!(!rep.passes(1e-6));
    }

    #[test]
    fn fixed_region_scalar_classo() {
        let p = scalar_classo();
        let act = Activation::for_problem(&p);
        let rep = fixed_region_residual(&p, &act, arr1(&[0.0]).view(), 0.0).unwrap();
        assert_eq!(rep.inactive_residuals, vec![(0, 0.0)]);
        assert!(rep.passes(0.0));
    }

    #[test]
    fn kkt_examples() {
        let p = identity_fixture();
        let cert = kkt_certificate(&p, arr1(&[1.0, 0.0]).view(), 1e-8).unwrap();
        assert!(cert.passed());
        assert_eq!(cert.stationarity_residual, 0.0);
        assert_eq!(cert.multipliers, vec![0.0, 0.0]);

        // a = 0: the worst coordinate overshoots the interval by ‖b‖∞ − λ1.
        let cert = kkt_certificate(&p, arr1(&[0.0, 0.0]).view(), 1e-8).unwrap();
        assert!(!cert.passed());
        assert_eq!(cert.stationarity_residual, 1.0);

        let cert = kkt_certificate(&p, arr1(&[1.01, 0.0]).view(), 1e-8).unwrap();
        assert!((cert.stationarity_residual - 0.01).abs() < 1e-15);
    }

    #[test]
    fn classo_multipliers_and_feasibility() {
        let p = scalar_classo();
        let cert = kkt_certificate(&p, arr1(&[0.0]).view(), 1e-10).unwrap();
        assert!(cert.passed());
        // Correlation −3 sits 2 below −λ1, which the multiplier must absorb.
        assert_eq!(cert.multipliers, vec![2.0]);

        let cert = kkt_certificate(&p, arr1(&[-0.5]).view(), 1e-10).unwrap();
        assert!(!cert.passed());
        assert_eq!(cert.feasibility_violation, 0.5);
    }

    #[test]
    fn lift_examples() {
        let p = identity_fixture();
        let act = Activation::for_problem(&p);
        let u = lift_solution(&p, &act, arr1(&[1.0, 0.0]).view()).unwrap();
        assert_eq!(u, arr1(&[2.0, 0.5]));

        let p = scalar_classo();
        let act = Activation::for_problem(&p);
        let u = lift_solution(&p, &act, arr1(&[0.0]).view()).unwrap();
        assert_eq!(u, arr1(&[-3.0]));
        assert_eq!(act.theta(u[0]), 0.0);
    }

    #[test]
    fn lift_rejects_non_optimal() {
        let p = identity_fixture();
        let act = Activation::for_problem(&p);
        assert!(matches!(
            lift_solution(&p, &act, arr1(&[0.5, 0.0]).view()),
            Err(LcaError::Domain(_))
        ));
    }

    #[test]
    fn elastic_fixture() {
        // Φ = I, s = 3, λ1 = 1, λ2 = 0.5: optimum a = (3 − 1)/2 = 1.
        let p = Problem::new(
            Array2::eye(1),
            arr1(&[3.0]),
            1.0,
            0.5,
            ConstraintMode::ClassoElasticNet,
        )
        .unwrap();
        let act = Activation::for_problem(&p);
        assert!(kkt_certificate(&p, arr1(&[1.0]).view(), 1e-14)
            .unwrap()
            .passed());
        let rep = fixed_region_residual(&p, &act, arr1(&[1.0]).view(), 0.0).unwrap();
        assert_eq!(rep.max_residual, 0.0);
        let u = lift_solution(&p, &act, arr1(&[1.0]).view()).unwrap();
        assert_eq!(u, arr1(&[3.0]));
    }
}
