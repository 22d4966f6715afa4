//! Experiment configuration, loadable from one JSON file.

use std::fs;
use std::path::{Path, PathBuf};

use lca_core::io::{load_problem, load_problem_dir, LoadConfig};
use lca_core::problem::DEFAULT_LAMBDA1;
use lca_core::{
    generate_problem, ConstraintMode, GenerateSpec, IntegratorConfig, LcaError, Method, Problem,
    Result,
};
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_GAP_TOL: f64 = 1e-5;
pub const DEFAULT_KKT_TOL: f64 = 1e-6;

/// Where the problem comes from. A directory wins over matrix/signal files,
/// which win over the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSource {
    pub dir: Option<PathBuf>,
    pub matrix: Option<PathBuf>,
    pub signal: Option<PathBuf>,
    /// Rescale loaded columns to unit norm.
    pub normalize: bool,
    pub m: usize,
    pub n: usize,
    pub sparsity: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for ProblemSource {
    fn default() -> Self {
        let g = GenerateSpec::default();
        ProblemSource {
            dir: None,
            matrix: None,
            signal: None,
            normalize: false,
            m: g.m,
            n: g.n,
            sparsity: g.sparsity,
            noise_sigma: g.noise_sigma,
            seed: g.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum U0Kind {
    Zeros,
    Lifted,
    Random,
}

impl std::str::FromStr for U0Kind {
    type Err = LcaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zeros" => Ok(U0Kind::Zeros),
            "lifted" => Ok(U0Kind::Lifted),
            "random" => Ok(U0Kind::Random),
            other => Err(LcaError::Config(format!("unknown u0 kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct U0Spec {
    pub kind: U0Kind,
    pub seed: u64,
    /// Half-width of the uniform box for random starts.
    pub scale: f64,
}

impl Default for U0Spec {
    fn default() -> Self {
        U0Spec {
            kind: U0Kind::Zeros,
            seed: 0,
            scale: 1.0,
        }
    }
}

impl U0Spec {
    /// Initial state for kinds that do not need the oracle.
    pub fn draw(&self, n: usize) -> Array1<f64> {
        match self.kind {
            U0Kind::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                Array1::from_shape_fn(n, |_| rng.random_range(-self.scale..=self.scale))
            }
            _ => Array1::zeros(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSettings {
    pub enabled: bool,
    pub method: Method,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings {
            enabled: true,
            method: Method::Fista,
            tol: 1e-10,
            max_iter: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub gap: f64,
    pub kkt: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            gap: DEFAULT_GAP_TOL,
            kkt: DEFAULT_KKT_TOL,
        }
    }
}

/// Everything `run` needs. Unset weights and mode fall back to the problem
/// directory's metadata, then to the generator defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSource,
    pub mode: Option<ConstraintMode>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub integrator: IntegratorConfig,
    pub u0: U0Spec,
    pub oracle: OracleSettings,
    pub output_dir: Option<PathBuf>,
    pub tolerances: Tolerances,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| LcaError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| LcaError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.integrator.validate()?;
        if self.oracle.tol.is_nan() || self.oracle.tol <= 0.0 || self.oracle.max_iter == 0 {
            return Err(LcaError::Config(
                "oracle tol must be positive and max_iter at least 1".into(),
            ));
        }
        if !(self.tolerances.gap > 0.0 && self.tolerances.kkt > 0.0) {
            return Err(LcaError::Config("tolerances must be positive".into()));
        }
        if !(self.u0.scale.is_finite() && self.u0.scale >= 0.0) {
            return Err(LcaError::Config(format!(
                "u0 scale must be finite and non-negative, got {}",
                self.u0.scale
            )));
        }
        if self.u0.kind == U0Kind::Lifted && !self.oracle.enabled {
            return Err(LcaError::Config(
                "a lifted start needs the oracle solution".into(),
            ));
        }
        Ok(())
    }

    fn weights(&self, mode: ConstraintMode) -> (f64, f64) {
        let lambda1 = self.lambda1.unwrap_or(DEFAULT_LAMBDA1);
        let lambda2 = self
            .lambda2
            .unwrap_or(if mode.is_elastic() { 0.1 } else { 0.0 });
        (lambda1, lambda2)
    }

    /// Builds the problem described by `self.problem`.
    pub fn build_problem(&self) -> Result<BuiltProblem> {
        let src = &self.problem;
        if let Some(dir) = &src.dir {
            let (stored, meta) = load_problem_dir(dir)?;
            if self.mode.is_none() && self.lambda1.is_none() && self.lambda2.is_none() {
                return Ok(BuiltProblem {
                    problem: stored,
                    seed: meta.seed,
                    column_scales: meta.column_scales,
                    planted: None,
                });
            }
            let mode = self.mode.unwrap_or(meta.mode);
            let lambda1 = self.lambda1.unwrap_or(meta.lambda1);
            let lambda2 =
                self.lambda2
                    .unwrap_or(if mode.is_elastic() { meta.lambda2 } else { 0.0 });
            let problem = Problem::new(
                stored.phi().clone(),
                stored.signal().clone(),
                lambda1,
                lambda2,
                mode,
            )?;
            return Ok(BuiltProblem {
                problem,
                seed: meta.seed,
                column_scales: meta.column_scales,
                planted: None,
            });
        }
        let mode = self.mode.unwrap_or(ConstraintMode::Lasso);
        let (lambda1, lambda2) = self.weights(mode);
        match (&src.matrix, &src.signal) {
            (Some(matrix), Some(signal)) => {
                let loaded = load_problem(
                    matrix,
                    signal,
                    &LoadConfig {
                        mode,
                        lambda1,
                        lambda2,
                        normalize: src.normalize,
                    },
                )?;
                Ok(BuiltProblem {
                    problem: loaded.problem,
                    seed: None,
                    column_scales: loaded.column_scales,
                    planted: None,
                })
            }
            (None, None) => {
                let spec = GenerateSpec {
                    m: src.m,
                    n: src.n,
                    sparsity: src.sparsity,
                    noise_sigma: src.noise_sigma,
                    seed: src.seed,
                    mode,
                    lambda1,
                    lambda2,
                };
                let (problem, planted) = generate_problem(&spec)?;
                Ok(BuiltProblem {
                    problem,
                    seed: Some(src.seed),
                    column_scales: None,
                    planted: Some(planted),
                })
            }
            _ => Err(LcaError::Config(
                "--matrix and --signal must be given together".into(),
            )),
        }
    }
}

pub struct BuiltProblem {
    pub problem: Problem,
    pub seed: Option<u64>,
    pub column_scales: Option<Vec<f64>>,
    pub planted: Option<Array1<f64>>,
}
