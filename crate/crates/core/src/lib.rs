//! Risk-aware alpha-fair routing for urban air mobility networks.
//!
//! A network of vertiports (nodes) and flight corridors (links) carries
//! payload along explicitly listed routes, each serving one or more
//! communities. [`fairsolver`] allocates payload to communities by maximizing
//! a sum of alpha-utilities while a coherent risk measure (CVaR, EVaR or a
//! total-variation ball) bounds how far the vehicle flow may exceed the
//! node and link capacities across a finite set of capacity scenarios.
//!
//! Module map:
//!
//! - [`network`]: graph, routes, communities and the incidence matrices.
//! - [`riskmeasures`]: scenario sets, violation levels, envelope functions,
//!   their conjugates, and primal/dual evaluation of the risk measure.
//! - [`lpcore`]: dense bounded revised simplex used by everything else.
//! - [`fairsolver`]: the single-level reformulation, Frank-Wolfe, the
//!   max-sum baseline and the fairness-condition checker.
//! - [`casegen`]: reproducible synthetic instances at city scale.
//! - [`io`]: versioned JSON file formats.
//! - [`exec`]: data-parallel helpers with a sequential fallback.

pub mod casegen;
pub mod exec;
pub mod fairsolver;
pub mod io;
pub mod lpcore;
pub mod network;
pub mod riskmeasures;

pub use exec::ExecMode;
pub use lpcore::{lp_check, lp_solve, LinearProgram, LpResult, LpStatus};
pub use network::{build_incidence, validate_network, IncidenceMatrices, Network};
pub use fairsolver::{
    check_alpha_fairness, solve_fair, solve_maxsum, FairProblem, FlowSolution, SolveError,
    SolveReport, SolverConfig, StepRule,
};
pub use riskmeasures::{RiskKind, RiskSpec, ScenarioSet};
