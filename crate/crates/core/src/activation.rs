//! Threshold functions mapping LCA internal states to output coefficients.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{LcaError, Result};
use crate::problem::{ConstraintMode, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    /// Two-sided soft threshold (LASSO).
    SoftLasso,
    /// `max(x − λ1, 0)` (non-negative LASSO).
    OneSidedClasso,
    /// One-sided threshold scaled by `1/(2λ2 + 1)` (non-negative elastic net).
    ElasticCe,
    /// Two-sided threshold scaled by `1/(2λ2 + 1)` (elastic net).
    ElasticE,
}

impl ActivationKind {
    pub fn for_mode(mode: ConstraintMode) -> Self {
        match mode {
            ConstraintMode::Lasso => ActivationKind::SoftLasso,
            ConstraintMode::Classo => ActivationKind::OneSidedClasso,
            ConstraintMode::ElasticNet => ActivationKind::ElasticE,
            ConstraintMode::ClassoElasticNet => ActivationKind::ElasticCe,
        }
    }

    pub fn is_one_sided(self) -> bool {
        matches!(
            self,
            ActivationKind::OneSidedClasso | ActivationKind::ElasticCe
        )
    }

    pub fn is_elastic(self) -> bool {
        matches!(self, ActivationKind::ElasticCe | ActivationKind::ElasticE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    kind: ActivationKind,
    lambda1: f64,
    lambda2: f64,
}

impl Activation {
    pub fn new(kind: ActivationKind, lambda1: f64, lambda2: f64) -> Result<Self> {
        if !(lambda1.is_finite() && lambda1 > 0.0) {
            return Err(LcaError::Config(format!(
                "activation threshold must be positive, got {lambda1}"
            )));
        }
        let ok = if kind.is_elastic() {
            lambda2.is_finite() && lambda2 > 0.0
        } else {
            lambda2 == 0.0
        };
        if !ok {
            return Err(LcaError::Config(format!(
                "lambda2 = {lambda2} is not valid for {kind:?}"
            )));
        }
        Ok(Activation {
            kind,
            lambda1,
            lambda2,
        })
    }

    /// The activation matching the problem's mode and weights.
    pub fn for_problem(problem: &Problem) -> Self {
        // Problem construction already validated the weights against the mode.
        Activation {
            kind: ActivationKind::for_mode(problem.mode()),
            lambda1: problem.lambda1(),
            lambda2: problem.lambda2(),
        }
    }

    pub fn kind(&self) -> ActivationKind {
        self.kind
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    /// Derivative of θ wherever θ is nonzero: 1, or `1/(2λ2 + 1)` for the
    /// elastic variants.
    pub fn active_slope(&self) -> f64 {
        if self.kind.is_elastic() {
            1.0 / (2.0 * self.lambda2 + 1.0)
        } else {
            1.0
        }
    }

    /// Scalar threshold θ. At the kink `x = λ1` the output is 0.
    pub fn theta(&self, x: f64) -> f64 {
        let lambda = self.lambda1;
        match self.kind {
            ActivationKind::OneSidedClasso => {
                if x > lambda {
                    x - lambda
                } else {
                    0.0
                }
            }
            ActivationKind::SoftLasso => soft_threshold(x, lambda),
            ActivationKind::ElasticCe => {
                if x > lambda {
                    (x - lambda) / (2.0 * self.lambda2 + 1.0)
                } else {
                    0.0
                }
            }
            ActivationKind::ElasticE => soft_threshold(x, lambda) / (2.0 * self.lambda2 + 1.0),
        }
    }

    /// Componentwise θ.
    pub fn theta_vec(&self, u: ArrayView1<'_, f64>) -> Array1<f64> {
        u.mapv(|x| self.theta(x))
    }

    /// Inverse of θ restricted to its active domain, i.e. the unique `u`
    /// with `θ(u) = a` for `a ≠ 0`.
    pub fn theta_inverse_active(&self, a: f64) -> Result<f64> {
        if a == 0.0 || !a.is_finite() {
            return Err(LcaError::Domain(format!(
                "θ⁻¹ is only unique on nonzero outputs, got {a}"
            )));
        }
        if self.kind.is_one_sided() && a < 0.0 {
            return Err(LcaError::Domain(format!(
                "one-sided activation has no preimage for {a} < 0"
            )));
        }
        let scale = 2.0 * self.lambda2 + 1.0;
        Ok(match self.kind {
            ActivationKind::SoftLasso => a + self.lambda1 * a.signum(),
            ActivationKind::OneSidedClasso => a + self.lambda1,
            ActivationKind::ElasticE => scale * a + self.lambda1 * a.signum(),
            ActivationKind::ElasticCe => scale * a + self.lambda1,
        })
    }

    /// Projects `x` onto the zero set θ⁻¹(0): `[−λ1, λ1]` for two-sided
    /// activations, `(−∞, λ1]` for one-sided ones.
    pub fn clamp_to_dead_zone(&self, x: f64) -> f64 {
        if self.kind.is_one_sided() {
            x.min(self.lambda1)
        } else {
            x.clamp(-self.lambda1, self.lambda1)
        }
    }
}

/// `sign(x)·max(|x| − λ, 0)`.
pub fn soft_threshold(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}
