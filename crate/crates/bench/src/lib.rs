//! Shared fixtures for the benchmarks.

use lca_core::{generate_problem, ConstraintMode, GenerateSpec, Problem};

/// A generated instance of the given size with a fixed seed.
pub fn instance(m: usize, n: usize, mode: ConstraintMode) -> Problem {
    let spec = GenerateSpec {
        m,
        n,
        sparsity: (n / 8).max(1),
        mode,
        lambda2: if mode.is_elastic() { 0.1 } else { 0.0 },
        ..GenerateSpec::default()
    };
    generate_problem(&spec).expect("benchmark instance").0
}
