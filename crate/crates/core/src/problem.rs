//! (C)LASSO and elastic-net problem instances.
//!
//! A [`Problem`] owns the dictionary `phi` (unit-norm columns), the signal,
//! the regularization weights and the constraint mode, together with the
//! cached quantities every LCA evaluation needs: `b = phiᵀ s` and the
//! lateral-inhibition matrix `phiᵀ phi − I`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LcaError, Result};

/// Allowed deviation of a dictionary column norm from 1.
pub const COLUMN_NORM_TOL: f64 = 1e-9;

/// Zero tolerance used when classifying supports for reporting.
pub const DIAGNOSTIC_ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintMode {
    Lasso,
    Classo,
    #[serde(rename = "elastic")]
    ElasticNet,
    #[serde(rename = "classo-elastic")]
    ClassoElasticNet,
}

impl ConstraintMode {
    pub const ALL: [ConstraintMode; 4] = [
        ConstraintMode::Lasso,
        ConstraintMode::Classo,
        ConstraintMode::ElasticNet,
        ConstraintMode::ClassoElasticNet,
    ];

    /// True for the modes carrying the constraint `a >= 0`.
    pub fn is_nonnegative(self) -> bool {
        matches!(
            self,
            ConstraintMode::Classo | ConstraintMode::ClassoElasticNet
        )
    }

    pub fn is_elastic(self) -> bool {
        matches!(
            self,
            ConstraintMode::ElasticNet | ConstraintMode::ClassoElasticNet
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConstraintMode::Lasso => "lasso",
            ConstraintMode::Classo => "classo",
            ConstraintMode::ElasticNet => "elastic",
            ConstraintMode::ClassoElasticNet => "classo-elastic",
        }
    }

    pub(crate) fn check_weights(self, lambda1: f64, lambda2: f64) -> Result<()> {
        if !(lambda1.is_finite() && lambda1 > 0.0) {
            return Err(LcaError::Config(format!(
                "lambda1 must be positive and finite, got {lambda1}"
            )));
        }
        if !(lambda2.is_finite() && lambda2 >= 0.0) {
            return Err(LcaError::Config(format!(
                "lambda2 must be non-negative and finite, got {lambda2}"
            )));
        }
        match (self.is_elastic(), lambda2 > 0.0) {
            (true, false) => Err(LcaError::Config(format!(
                "mode {self} requires lambda2 > 0"
            ))),
            (false, true) => Err(LcaError::Config(format!(
                "mode {self} requires lambda2 = 0, got {lambda2}"
            ))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for ConstraintMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConstraintMode {
    type Err = LcaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lasso" => Ok(ConstraintMode::Lasso),
            "classo" => Ok(ConstraintMode::Classo),
            "elastic" | "elastic-net" => Ok(ConstraintMode::ElasticNet),
            "classo-elastic" => Ok(ConstraintMode::ClassoElasticNet),
            other => Err(LcaError::Config(format!("unknown mode `{other}`"))),
        }
    }
}

/// Partition of the coordinate indices (0-based) into nonzero and zero outputs.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SupportSets {
    pub active: Vec<usize>,
    pub inactive: Vec<usize>,
}

impl SupportSets {
    pub fn is_active(&self, n: usize) -> bool {
        self.active.binary_search(&n).is_ok()
    }
}

/// `n` is active iff `|a_n| > zero_tol`.
pub fn support_sets(a: ArrayView1<'_, f64>, zero_tol: f64) -> SupportSets {
    let (active, inactive) = (0..a.len()).partition(|&n| a[n].abs() > zero_tol);
    SupportSets { active, inactive }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    phi: Array2<f64>,
    signal: Array1<f64>,
    lambda1: f64,
    lambda2: f64,
    mode: ConstraintMode,
    b: Array1<f64>,
    gram_minus_identity: Array2<f64>,
}

impl Problem {
    /// Builds a problem from a dictionary whose columns already have unit norm.
    pub fn new(
        phi: Array2<f64>,
        signal: Array1<f64>,
        lambda1: f64,
        lambda2: f64,
        mode: ConstraintMode,
    ) -> Result<Self> {
        let (m, n) = phi.dim();
        if m == 0 || n == 0 {
            return Err(LcaError::Config(format!(
                "dictionary must be at least 1x1, got {m}x{n}"
            )));
        }
        if signal.len() != m {
            return Err(LcaError::dim("signal length", m, signal.len()));
        }
        mode.check_weights(lambda1, lambda2)?;
        if let Some(bad) = phi.iter().chain(signal.iter()).find(|v| !v.is_finite()) {
            return Err(LcaError::Validation(format!(
                "problem data contains a non-finite value ({bad})"
            )));
        }
        for (j, col) in phi.axis_iter(Axis(1)).enumerate() {
            let norm = col.dot(&col).sqrt();
            if (norm - 1.0).abs() > COLUMN_NORM_TOL {
                return Err(LcaError::Validation(format!(
                    "column {j} has norm {norm}, expected 1 within {COLUMN_NORM_TOL:e}"
                )));
            }
        }

        let b = phi.t().dot(&signal);
        let mut gram = phi.t().dot(&phi);
        for i in 0..n {
            for j in (i + 1)..n {
                gram[[j, i]] = gram[[i, j]];
            }
            gram[[i, i]] -= 1.0;
        }

        Ok(Problem {
            phi,
            signal,
            lambda1,
            lambda2,
            mode,
            b,
            gram_minus_identity: gram,
        })
    }

    /// Rescales every column of `phi` to unit norm before building the
    /// problem. Returns the applied scale factors (the original norms).
    pub fn with_normalized_columns(
        mut phi: Array2<f64>,
        signal: Array1<f64>,
        lambda1: f64,
        lambda2: f64,
        mode: ConstraintMode,
    ) -> Result<(Self, Vec<f64>)> {
        let scales = normalize_columns(&mut phi)?;
        Ok((Problem::new(phi, signal, lambda1, lambda2, mode)?, scales))
    }

    pub fn phi(&self) -> &Array2<f64> {
        &self.phi
    }

    pub fn signal(&self) -> &Array1<f64> {
        &self.signal
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    pub fn mode(&self) -> ConstraintMode {
        self.mode
    }

    /// `phiᵀ s`.
    pub fn b(&self) -> &Array1<f64> {
        &self.b
    }

    pub fn gram_minus_identity(&self) -> &Array2<f64> {
        &self.gram_minus_identity
    }

    /// Signal dimension M.
    pub fn m(&self) -> usize {
        self.phi.nrows()
    }

    /// Number of atoms N.
    pub fn n(&self) -> usize {
        self.phi.ncols()
    }

    pub(crate) fn check_len(&self, what: &'static str, v: ArrayView1<'_, f64>) -> Result<()> {
        if v.len() == self.n() {
            Ok(())
        } else {
            Err(LcaError::dim(what, self.n(), v.len()))
        }
    }

    /// `b − phiᵀ phi a`, the negative gradient of the quadratic term.
    pub fn correlation_residual(&self, a: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        self.check_len("coefficient vector", a)?;
        let fit = self.phi.dot(&a);
        Ok(&self.b - &self.phi.t().dot(&fit))
    }

    /// SHA-256 over the dimensions and little-endian bytes of `phi` (row
    /// major) and the signal.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.m() as u64).to_le_bytes());
        hasher.update((self.n() as u64).to_le_bytes());
        for v in self.phi.iter() {
            hasher.update(v.to_le_bytes());
        }
        for v in self.signal.iter() {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

/// Rescales the columns of `phi` in place to unit ℓ2 norm and returns the
/// original norms. A zero (or non-finite) column cannot be normalized.
pub fn normalize_columns(phi: &mut Array2<f64>) -> Result<Vec<f64>> {
    let mut scales = Vec::with_capacity(phi.ncols());
    for (j, mut col) in phi.axis_iter_mut(Axis(1)).enumerate() {
        let norm = col.dot(&col).sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(LcaError::Validation(format!(
                "column {j} has norm {norm} and cannot be normalized"
            )));
        }
        col.mapv_inplace(|v| v / norm);
        scales.push(norm);
    }
    Ok(scales)
}

/// `½‖s − Φa‖² + λ1‖a‖₁ + λ2‖a‖²`. The ℓ2 term is zero outside the elastic
/// modes because λ2 is zero there.
pub fn objective(problem: &Problem, a: ArrayView1<'_, f64>) -> Result<f64> {
    problem.check_len("coefficient vector", a)?;
    let residual = &problem.signal - &problem.phi.dot(&a);
    let l1: f64 = a.iter().map(|v| v.abs()).sum();
    let l2: f64 = a.dot(&a);
    Ok(0.5 * residual.dot(&residual) + problem.lambda1 * l1 + problem.lambda2 * l2)
}

/// Parameters of the planted-signal generator.
///
/// The dictionary has i.i.d. standard normal entries, rescaled column-wise
/// to unit norm. The planted coefficient vector has `sparsity` nonzeros with
/// magnitudes uniform in `[0.5, 2]` (random sign unless the mode is
/// non-negative), and `s = Φ a⁰ + ε` with `ε ~ N(0, noise_sigma² I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSpec {
    pub m: usize,
    pub n: usize,
    pub sparsity: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub mode: ConstraintMode,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for GenerateSpec {
    fn default() -> Self {
        GenerateSpec {
            m: 20,
            n: 40,
            sparsity: 5,
            noise_sigma: 0.01,
            seed: 0,
            mode: ConstraintMode::Lasso,
            lambda1: DEFAULT_LAMBDA1,
            lambda2: 0.0,
        }
    }
}

/// Default ℓ1 weight for generated instances.
pub const DEFAULT_LAMBDA1: f64 = 1.0;

/// Draws a problem instance and returns it with the planted coefficients.
pub fn generate_problem(spec: &GenerateSpec) -> Result<(Problem, Array1<f64>)> {
    let GenerateSpec {
        m,
        n,
        sparsity,
        noise_sigma,
        seed,
        mode,
        lambda1,
        lambda2,
    } = *spec;
    if m == 0 || n == 0 {
        return Err(LcaError::Config(format!(
            "dimensions must be positive, got m={m}, n={n}"
        )));
    }
    if sparsity == 0 || sparsity > n {
        return Err(LcaError::Config(format!(
            "sparsity must lie in 1..={n}, got {sparsity}"
        )));
    }
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(LcaError::Config(format!(
            "noise_sigma must be non-negative, got {noise_sigma}"
        )));
    }
    mode.check_weights(lambda1, lambda2)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Column-major fill so each atom is one contiguous run of draws.
    let mut phi = Array2::<f64>::zeros((m, n));
    for j in 0..n {
        for i in 0..m {
            phi[[i, j]] = StandardNormal.sample(&mut rng);
        }
    }
    normalize_columns(&mut phi)?;

    let magnitude = Uniform::new_inclusive(0.5, 2.0).expect("static bounds");
    let mut support = sample(&mut rng, n, sparsity).into_vec();
    support.sort_unstable();
    let mut planted = Array1::<f64>::zeros(n);
    for &j in &support {
        let mut v = magnitude.sample(&mut rng);
        if !mode.is_nonnegative() && rng.random_bool(0.5) {
            v = -v;
        }
        planted[j] = v;
    }

    let mut signal = phi.dot(&planted);
    if noise_sigma > 0.0 {
        let noise = Normal::new(0.0, noise_sigma).map_err(|e| LcaError::Config(e.to_string()))?;
        signal.mapv_inplace(|v| v + noise.sample(&mut rng));
    }

    let problem = Problem::new(phi, signal, lambda1, lambda2, mode)?;
    Ok((problem, planted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};
    use proptest::prelude::*;

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

    #[test]
    fn objective_fixture_values() {
        let p = identity_fixture();
        assert_eq!(objective(&p, arr1(&[0.0, 0.0]).view()).unwrap(), 2.125);
        assert_eq!(objective(&p, arr1(&[1.0, 0.0]).view()).unwrap(), 1.625);
    }

    #[test]
    fn fixture_minimum_by_grid_search() {
        let p = identity_fixture();
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let steps = 600;
        for i in 0..=steps {
            for j in 0..=steps {
                let x = -3.0 + 6.0 * i as f64 / steps as f64;
                let y = -3.0 + 6.0 * j as f64 / steps as f64;
                let e = objective(&p, arr1(&[x, y]).view()).unwrap();
                if e < best.0 {
                    best = (e, x, y);
                }
            }
        }
        assert!((best.0 - 1.625).abs() < 1e-12);
        assert!((best.1 - 1.0).abs() < 1e-12 && best.2.abs() < 1e-12);
    }

    #[test]
    fn objective_at_zero_residual_is_penalty_only() {
        // s = Φ a exactly, so only the penalty terms remain.
        let phi = arr2(&[[0.6, 0.0], [0.8, 1.0]]);
        let a = arr1(&[1.5, -0.5]);
        let s = phi.dot(&a);
        let p = Problem::new(phi, s, 0.3, 0.2, ConstraintMode::ElasticNet).unwrap();
        let e = objective(&p, a.view()).unwrap();
        assert!((e - (0.3 * 2.0 + 0.2 * 2.5)).abs() < 1e-14);
    }

    #[test]
    fn objective_dimension_mismatch() {
        let p = identity_fixture();
        assert!(matches!(
            objective(&p, arr1(&[1.0]).view()),
            Err(LcaError::Dimension { .. })
        ));
    }

    #[test]
    fn support_set_examples() {
        let s = support_sets(arr1(&[0.0, 3.0, -0.5]).view(), 0.0);
        assert_eq!(s.active, vec![1, 2]);
        assert_eq!(s.inactive, vec![0]);

        let s = support_sets(arr1(&[1e-14, 1.0]).view(), 1e-12);
        assert_eq!(s.active, vec![1]);
        assert_eq!(s.inactive, vec![0]);

        let s = support_sets(Array1::zeros(4).view(), 0.0);
        assert!(s.active.is_empty());
        assert_eq!(s.inactive, vec![0, 1, 2, 3]);
    }

    #[test]
    fn rejects_bad_columns_and_weights() {
        let phi = arr2(&[[2.0, 0.0], [0.0, 1.0]]);
        assert!(matches!(
            Problem::new(
                phi.clone(),
                arr1(&[1.0, 1.0]),
                1.0,
                0.0,
                ConstraintMode::Lasso
            ),
            Err(LcaError::Validation(_))
        ));
        let (p, scales) = Problem::with_normalized_columns(
            phi,
            arr1(&[1.0, 1.0]),
            1.0,
            0.0,
            ConstraintMode::Lasso,
        )
        .unwrap();
        assert_eq!(scales, vec![2.0, 1.0]);
        assert_eq!(p.phi()[[0, 0]], 1.0);

        let eye = Array2::eye(2);
        let s = arr1(&[1.0, 1.0]);
        for (l1, l2, mode) in [
            (0.0, 0.0, ConstraintMode::Lasso),
            (1.0, 0.5, ConstraintMode::Classo),
            (1.0, 0.0, ConstraintMode::ElasticNet),
            (1.0, -1.0, ConstraintMode::ClassoElasticNet),
        ] {
            assert!(matches!(
                Problem::new(eye.clone(), s.clone(), l1, l2, mode),
                Err(LcaError::Config(_))
            ));
        }
    }

    #[test]
    fn zero_column_cannot_be_normalized() {
        let mut phi = arr2(&[[1.0, 0.0], [0.0, 0.0]]);
        assert!(matches!(
            normalize_columns(&mut phi),
            Err(LcaError::Validation(_))
        ));
    }

    #[test]
    fn generated_columns_are_unit_norm() {
        let spec = GenerateSpec {
            seed: 42,
            ..GenerateSpec::default()
        };
        let (p, planted) = generate_problem(&spec).unwrap();
        for col in p.phi().axis_iter(Axis(1)) {
            assert!((col.dot(&col).sqrt() - 1.0).abs() <= 1e-12);
        }
        assert_eq!(planted.iter().filter(|v| **v != 0.0).count(), 5);
        let g = p.gram_minus_identity();
        for i in 0..p.n() {
            for j in 0..p.n() {
                assert_eq!(g[[i, j]], g[[j, i]]);
            }
        }
    }

    #[test]
    fn generation_rejects_bad_dimensions() {
        for spec in [
            GenerateSpec {
                m: 0,
                ..GenerateSpec::default()
            },
            GenerateSpec {
                sparsity: 0,
                ..GenerateSpec::default()
            },
            GenerateSpec {
                sparsity: 41,
                ..GenerateSpec::default()
            },
            GenerateSpec {
                noise_sigma: -1.0,
                ..GenerateSpec::default()
            },
        ] {
            assert!(matches!(generate_problem(&spec), Err(LcaError::Config(_))));
        }
    }

    #[test]
    fn mode_strings_round_trip() {
        for mode in ConstraintMode::ALL {
            assert_eq!(mode.as_str().parse::<ConstraintMode>().unwrap(), mode);
            let json = serde_json::to_string(&mode).unwrap();
            assert_eq!(json, format!("\"{}\"", mode.as_str()));
        }
    }

    proptest! {
        #[test]
        fn generation_is_reproducible(seed in any::<u64>(), classo in any::<bool>()) {
            let spec = GenerateSpec {
                m: 6,
                n: 9,
                sparsity: 3,
                seed,
                mode: if classo { ConstraintMode::Classo } else { ConstraintMode::Lasso },
                ..GenerateSpec::default()
            };
            let (p1, a1) = generate_problem(&spec).unwrap();
            let (p2, a2) = generate_problem(&spec).unwrap();
            prop_assert_eq!(p1.fingerprint(), p2.fingerprint());
            prop_assert_eq!(&p1, &p2);
            prop_assert_eq!(&a1, &a2);
            if classo {
                prop_assert!(a1.iter().all(|v| *v >= 0.0));
            }
        }

        #[test]
        fn objective_is_nonnegative_and_convex(
            seed in 0u64..500,
            xs in proptest::collection::vec(-3.0f64..3.0, 16),
            t in 0.0f64..=1.0,
        ) {
            let spec = GenerateSpec {
                m: 5,
                n: 8,
                sparsity: 2,
                seed,
                mode: ConstraintMode::ElasticNet,
                lambda2: 0.25,
                ..GenerateSpec::default()
            };
            let (p, _) = generate_problem(&spec).unwrap();
            let a = Array1::from(xs[..8].to_vec());
            let b = Array1::from(xs[8..].to_vec());
            let mix = &a * t + &b * (1.0 - t);
            let ea = objective(&p, a.view()).unwrap();
            let eb = objective(&p, b.view()).unwrap();
            let em = objective(&p, mix.view()).unwrap();
            prop_assert!(ea >= 0.0 && eb >= 0.0);
            prop_assert!(em <= t * ea + (1.0 - t) * eb + 1e-10);
        }

        #[test]
        fn support_sets_partition(xs in proptest::collection::vec(-1.0f64..1.0, 0..30), tol in 0.0f64..0.5) {
            let a = Array1::from(xs);
            let s = support_sets(a.view(), tol);
            let mut all: Vec<usize> = s.active.iter().chain(&s.inactive).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..a.len()).collect::<Vec<_>>());
        }
    }
}
