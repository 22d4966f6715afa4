//! Locally competitive algorithm (LCA) dynamics for LASSO, non-negative
//! LASSO and elastic-net problems.
//!
//! The crate provides the problem representation ([`problem`]), the
//! threshold activations ([`activation`]), the LCA flow with its Lyapunov
//! diagnostics and integrators ([`dynamics`]), optimality certificates
//! ([`optimality`]), independent proximal-gradient reference solvers
//! ([`oracle`]) and file formats ([`io`]).

pub mod activation;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod optimality;
pub mod oracle;
pub mod problem;

pub use activation::{Activation, ActivationKind};
pub use dynamics::{
    analytic_region_flow, field, lyapunov_v, lyapunov_w, run_flow, step, FlowState, FlowStatus,
    FlowSummary, FlowTrace, IntegratorConfig, Scheme, TraceRecord,
};
pub use error::{LcaError, Result};
pub use optimality::{
    fixed_region_residual, kkt_certificate, lift_solution, FixedRegionReport,
    OptimalityCertificate, Verdict,
};
pub use oracle::{check_uniqueness, solve, Method, OracleResult, ProxGradient, UniquenessCheck};
pub use problem::{
    generate_problem, objective, support_sets, ConstraintMode, GenerateSpec, Problem, SupportSets,
};
