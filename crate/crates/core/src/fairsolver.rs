//! Risk-aware alpha-fair routing.
//!
//! The risk constraint `ρ_δ(y) ≤ ε` is replaced by its single-level
//! certificate form: find `(h, w, λ, ν)` with
//!
//! ```text
//! K y ≤ (1 + h_i) cⁱ,  y ≤ (1 + h_i) dⁱ   for every scenario i
//! w − ν 1 ≥ h,  λ g*_δ(w/λ) − ν ≤ ε,  λ ≥ 0
//! ```
//!
//! For CVaR and TV the conjugate term is polyhedral and the whole feasible
//! set is a polytope. For EVaR it is convex but smooth and is approximated
//! from outside by supporting hyperplanes added on demand.
//!
//! The concave utility `Σ ψ_α(x_k)` is maximized by Frank-Wolfe. Every
//! linear subproblem goes to one warm-started [`Simplex`].

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, ExecMode};
use crate::lpcore::{LinearProgram, LpError, LpStatus, Sense, Simplex, SimplexOptions};
use crate::network::{build_incidence, mat_vec, IncidenceMatrices, Network};
use crate::riskmeasures::{
    evar_dual_minimizer, kl_divergence, perspective_conjugate, rho_primal, RiskError, RiskKind,
    RiskSpec, ScenarioSet,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("allocation {value} outside the utility domain (must be positive)")]
    Domain { value: f64 },
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("cut budget of {budget} exhausted with risk constraint still violated by {violation:.3e}")]
    CutBudget { budget: usize, violation: f64 },
    #[error("linear oracle ended with status {0:?}")]
    OracleStatus(LpStatus),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Risk(#[from] RiskError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    /// Classic Frank-Wolfe with exact line search.
    #[default]
    LineSearch,
    /// Re-optimizes over the convex hull of all vertices found so far.
    FullyCorrective,
}

impl std::str::FromStr for StepRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "line-search" => Ok(StepRule::LineSearch),
            "fully-corrective" => Ok(StepRule::FullyCorrective),
            other => Err(format!(
                "unknown step rule '{other}' (expected line-search|fully-corrective)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub gap_tol: f64,
    pub step_rule: StepRule,
    /// Lower bound on every community allocation.
    pub x_min: f64,
    /// Supporting hyperplanes allowed per solve (EVaR only).
    pub cut_budget: usize,
    /// Accepted excess of the EVaR conjugate constraint.
    pub cut_tol: f64,
    pub exec: ExecMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 100,
            gap_tol: 1e-6,
            step_rule: StepRule::LineSearch,
            x_min: 1e-3,
            cut_budget: 200,
            cut_tol: 1e-7,
            exec: ExecMode::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FairProblem {
    pub network: Network,
    pub incidence: IncidenceMatrices,
    pub scenarios: ScenarioSet,
    pub risk: RiskSpec,
    pub alpha: f64,
    pub config: SolverConfig,
}

impl FairProblem {
    pub fn new(
        network: Network,
        scenarios: ScenarioSet,
        risk: RiskSpec,
        alpha: f64,
        config: SolverConfig,
    ) -> Result<Self, SolveError> {
        scenarios.validate()?;
        scenarios.check_dims(network.node_count, network.link_count())?;
        let risk = RiskSpec::new(risk.kind, risk.delta, risk.epsilon)?;
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(SolveError::InvalidProblem(format!("alpha must be >= 0, got {alpha}")));
        }
        if !(config.x_min.is_finite() && config.x_min > 0.0) {
            return Err(SolveError::InvalidProblem(format!(
                "x_min must be positive, got {}",
                config.x_min
            )));
        }
        if !(config.gap_tol.is_finite() && config.gap_tol >= 0.0) {
            return Err(SolveError::InvalidProblem(format!(
                "gap tolerance must be >= 0, got {}",
                config.gap_tol
            )));
        }
        let incidence = build_incidence(&network);
        Ok(FairProblem {
            network,
            incidence,
            scenarios,
            risk,
            alpha,
            config,
        })
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        FairProblem {
            alpha,
            ..self.clone()
        }
    }

    pub fn with_risk(&self, risk: RiskSpec) -> Self {
        FairProblem {
            risk,
            ..self.clone()
        }
    }

    pub fn with_config(&self, config: SolverConfig) -> Self {
        FairProblem {
            config,
            ..self.clone()
        }
    }

    pub fn allocation(&self, z: &[f64]) -> Vec<f64> {
        mat_vec(&self.incidence.h, z)
    }
}

/// `ψ_α(x)`: `ln x` at `α = 1`, `x^{1−α}/(1−α)` otherwise.
pub fn alpha_utility(x: f64, alpha: f64) -> Result<f64, SolveError> {
    if !(x > 0.0) {
        return Err(SolveError::Domain { value: x });
    }
    Ok(utility(x, alpha))
}

/// `ψ'_α(x) = x^{−α}`.
pub fn alpha_utility_grad(x: f64, alpha: f64) -> Result<f64, SolveError> {
    if !(x > 0.0) {
        return Err(SolveError::Domain { value: x });
    }
    Ok(x.powf(-alpha))
}

fn utility(x: f64, alpha: f64) -> f64 {
    if alpha == 1.0 {
        x.ln()
    } else if alpha == 0.0 {
        x
    } else {
        x.powf(1.0 - alpha) / (1.0 - alpha)
    }
}

fn total_utility(x: &[f64], alpha: f64) -> f64 {
    x.iter().map(|&v| utility(v, alpha)).sum()
}

fn gradient(x: &[f64], alpha: f64) -> Vec<f64> {
    x.iter().map(|&v| v.powf(-alpha)).collect()
}

/// Column offsets of the stacked decision vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VarLayout {
    pub routes: usize,
    pub links: usize,
    pub scenarios: usize,
    pub z: usize,
    pub y: usize,
    pub h: usize,
    pub w: usize,
    pub lambda: usize,
    pub nu: usize,
    /// Absolute-value helpers `t ≥ |p ∘ w|`, CVaR only.
    pub t: Option<usize>,
    pub total: usize,
}

impl VarLayout {
    fn new(routes: usize, links: usize, scenarios: usize, kind: RiskKind) -> Self {
        let z = 0;
        let y = z + routes;
        let h = y + links;
        let w = h + scenarios;
        let lambda = w + scenarios;
        let nu = lambda + 1;
        let (t, total) = if kind == RiskKind::Cvar {
            (Some(nu + 1), nu + 1 + scenarios)
        } else {
            (None, nu + 1)
        };
        VarLayout {
            routes,
            links,
            scenarios,
            z,
            y,
            h,
            w,
            lambda,
            nu,
            t,
            total,
        }
    }
}

/// The linear part of the reformulated problem.
#[derive(Debug, Clone)]
pub struct Reformulation {
    pub lp: LinearProgram,
    pub layout: VarLayout,
    pub h_max: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// True when the conjugate constraint is only outer-approximated and
    /// needs cuts (EVaR).
    pub nonlinear: bool,
}

/// Assembles every linear row of the reformulation.
///
/// Violation variables are capped at `ε / min p`, which cuts off nothing:
/// any feasible certificate has `p_i h_i ≤ pᵀh ≤ ρ_δ(h) ≤ ε`.
pub fn build_reformulation(problem: &FairProblem) -> Result<Reformulation, SolveError> {
    let net = &problem.network;
    let inc = &problem.incidence;
    let sc = &problem.scenarios;
    let risk = problem.risk;
    let p = &sc.probs;
    let nn = net.node_count;
    let nl = net.link_count();
    let nr = net.route_count();
    let ns = sc.len();
    let lay = VarLayout::new(nr, nl, ns, risk.kind);
    let mut lp = LinearProgram::new(lay.total, Sense::Maximize);

    let p_min = p.iter().copied().fold(f64::INFINITY, f64::min);
    let h_max = risk.epsilon / p_min;
    let lambda_max = 10.0 * (1.0 + h_max);
    let lambda_min = if risk.kind == RiskKind::Evar { 1e-9 } else { 0.0 };
    for i in 0..ns {
        lp.set_bounds(lay.h + i, 0.0, h_max);
        lp.set_bounds(lay.w + i, f64::NEG_INFINITY, f64::INFINITY);
    }
    lp.set_bounds(lay.lambda, lambda_min, lambda_max);
    lp.set_bounds(lay.nu, f64::NEG_INFINITY, f64::INFINITY);

    let row = || vec![0.0; lay.total];

    // balanced vehicle flow
    for j in 0..nn {
        let mut r = row();
        let mut any = false;
        for k in 0..nl {
            let e = inc.e[(j, k)];
            if e != 0.0 {
                r[lay.y + k] = e;
                any = true;
            }
        }
        if any {
            lp.add_eq(r, 0.0);
        }
    }
    // payload carried by vehicles
    for k in 0..nl {
        let mut r = row();
        for q in 0..nr {
            if inc.f[(k, q)] != 0.0 {
                r[lay.z + q] = inc.f[(k, q)];
            }
        }
        r[lay.y + k] = -1.0;
        lp.add_le(r, 0.0);
    }
    // inflated capacities per scenario
    for i in 0..ns {
        for j in 0..nn {
            let c = sc.node_caps[i][j];
            let mut r = row();
            let mut any = false;
            for k in 0..nl {
                if inc.k[(j, k)] != 0.0 {
                    r[lay.y + k] = inc.k[(j, k)];
                    any = true;
                }
            }
            if !any {
                continue;
            }
            r[lay.h + i] = -c;
            lp.add_le(r, c);
        }
        for k in 0..nl {
            let d = sc.link_caps[i][k];
            let mut r = row();
            r[lay.y + k] = 1.0;
            r[lay.h + i] = -d;
            lp.add_le(r, d);
        }
    }
    // h ≤ w − ν
    for i in 0..ns {
        let mut r = row();
        r[lay.h + i] = 1.0;
        r[lay.w + i] = -1.0;
        r[lay.nu] = 1.0;
        lp.add_le(r, 0.0);
    }
    // allocation floor
    for c in 0..net.community_count {
        let mut r = row();
        for q in 0..nr {
            if inc.h[(c, q)] != 0.0 {
                r[lay.z + q] = -inc.h[(c, q)];
            }
        }
        lp.add_le(r, -problem.config.x_min);
    }

    let delta = risk.delta;
    match risk.kind {
        RiskKind::Cvar => {
            let t0 = lay.t.expect("CVaR layout has helpers");
            let mut head = row();
            head[lay.lambda] = 1.0 / (1.0 - delta);
            head[lay.nu] = -1.0;
            lp.add_le(head, risk.epsilon);
            let mut sum = row();
            for i in 0..ns {
                for sign in [1.0, -1.0] {
                    let mut r = row();
                    r[lay.w + i] = sign * p[i];
                    r[t0 + i] = -1.0;
                    lp.add_le(r, 0.0);
                }
                sum[t0 + i] = 1.0;
            }
            sum[lay.lambda] = -1.0;
            lp.add_le(sum, 0.0);
        }
        RiskKind::Tv => {
            let mut head = row();
            head[lay.lambda] = 2.0 * delta;
            for i in 0..ns {
                head[lay.w + i] = p[i];
            }
            head[lay.nu] = -1.0;
            lp.add_le(head, risk.epsilon);
            for i in 0..ns {
                for sign in [1.0, -1.0] {
                    let mut r = row();
                    r[lay.w + i] = sign;
                    r[lay.lambda] = -1.0;
                    lp.add_le(r, 0.0);
                }
            }
        }
        RiskKind::Evar => {
            // supporting hyperplane at q = p
            let kappa = -(-delta).ln_1p();
            let mut r = row();
            for i in 0..ns {
                r[lay.w + i] = p[i];
            }
            r[lay.lambda] = kappa;
            r[lay.nu] = -1.0;
            lp.add_le(r, risk.epsilon);
        }
    }

    Ok(Reformulation {
        lp,
        layout: lay,
        h_max,
        lambda_min,
        lambda_max,
        nonlinear: risk.kind == RiskKind::Evar,
    })
}

/// Violation levels that ignore sub-tolerance flow on zero-capacity elements.
fn violation_levels_tol(problem: &FairProblem, y: &[f64], tol: f64) -> Vec<f64> {
    let inflow = mat_vec(&problem.incidence.k, y);
    let sc = &problem.scenarios;
    (0..sc.len())
        .map(|i| {
            let mut level = 0.0f64;
            let pairs = inflow.iter().zip(&sc.node_caps[i]).chain(y.iter().zip(&sc.link_caps[i]));
            for (load, cap) in pairs {
                if *cap > 0.0 {
                    level = level.max(load / cap - 1.0);
                } else if *load > tol {
                    return f64::INFINITY;
                }
            }
            level
        })
        .collect()
}

/// Linear maximization over the (cut-augmented) feasible set.
struct Oracle<'a> {
    problem: &'a FairProblem,
    layout: VarLayout,
    lambda_min: f64,
    simplex: Simplex,
    nonlinear: bool,
    cuts: usize,
    pivots: usize,
}

impl<'a> Oracle<'a> {
    /// Builds the LP and runs phase 1; an empty polytope is reported as
    /// [`SolveError::Infeasible`].
    fn new(problem: &'a FairProblem) -> Result<Self, SolveError> {
        let reform = build_reformulation(problem)?;
        let simplex = Simplex::new(&reform.lp, SimplexOptions::default())?;
        let mut oracle = Oracle {
            problem,
            layout: reform.layout,
            lambda_min: reform.lambda_min,
            simplex,
            nonlinear: reform.nonlinear,
            cuts: 0,
            pivots: 0,
        };
        oracle
            .simplex
            .set_objective(Sense::Maximize, &vec![0.0; reform.layout.total])?;
        let res = oracle.simplex.solve()?;
        oracle.pivots += res.iterations;
        match res.status {
            LpStatus::Optimal => Ok(oracle),
            LpStatus::Infeasible => Err(SolveError::Infeasible(explain_infeasible(problem))),
            other => Err(SolveError::OracleStatus(other)),
        }
    }

    /// Maximizes `weightsᵀ x` with `x = Hz`; returns a full decision vector
    /// that satisfies every constraint, including the exact EVaR one.
    fn maximize(&mut self, weights: &[f64]) -> Result<Vec<f64>, SolveError> {
        let lay = self.layout;
        let mut obj = vec![0.0; lay.total];
        let h = &self.problem.incidence.h;
        // the argmax is scale free; large gradients near x_min otherwise swamp the pricing tolerance
        let scale = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        let scale = if scale > 0.0 { scale } else { 1.0 };
        for q in 0..lay.routes {
            obj[lay.z + q] = (0..h.nrows()).map(|c| h[(c, q)] * weights[c]).sum::<f64>() / scale;
        }
        self.simplex.set_objective(Sense::Maximize, &obj)?;
        loop {
            let res = self.simplex.solve()?;
            self.pivots += res.iterations;
            match res.status {
                LpStatus::Optimal => {}
                LpStatus::Infeasible => {
                    return Err(SolveError::Infeasible(explain_infeasible(self.problem)))
                }
                other => return Err(SolveError::OracleStatus(other)),
            }
            let mut v = res.x;
            if !self.nonlinear {
                return Ok(v);
            }
            match self.evar_repair(&mut v)? {
                None => return Ok(v),
                Some((coeffs, violation)) => {
                    if self.cuts >= self.problem.config.cut_budget {
                        return Err(SolveError::CutBudget {
                            budget: self.problem.config.cut_budget,
                            violation,
                        });
                    }
                    self.simplex.add_le_row(&coeffs, self.problem.risk.epsilon)?;
                    self.cuts += 1;
                }
            }
        }
    }

    /// Replaces the certificate of an LP vertex by the tightest one for its
    /// flow. Returns a separating cut when even that one violates the
    /// constraint.
    fn evar_repair(&self, v: &mut [f64]) -> Result<Option<(Vec<f64>, f64)>, SolveError> {
        let lay = self.layout;
        let problem = self.problem;
        let risk = problem.risk;
        let p = &problem.scenarios.probs;
        let y = &v[lay.y..lay.y + lay.links];
        let levels = violation_levels_tol(problem, y, 1e-9);
        if levels.iter().any(|l| !l.is_finite()) {
            return Err(SolveError::Infeasible(
                "oracle vertex routes flow through a zero-capacity element".into(),
            ));
        }
        let (_, lambda) = evar_dual_minimizer(&levels, p, risk.delta)?;
        let lambda = lambda.max(self.lambda_min);
        let value = perspective_conjugate(risk.kind, risk.delta, &levels, lambda, p, 0.0)?;
        if value <= risk.epsilon + problem.config.cut_tol {
            v[lay.h..lay.h + lay.scenarios].copy_from_slice(&levels);
            v[lay.w..lay.w + lay.scenarios].copy_from_slice(&levels);
            v[lay.lambda] = lambda;
            v[lay.nu] = 0.0;
            return Ok(None);
        }
        let q = rho_primal(&levels, p, RiskKind::Evar, risk.delta)?.maximizing_q;
        let kappa = -(-risk.delta).ln_1p();
        let mut coeffs = vec![0.0; lay.total];
        coeffs[lay.w..lay.w + lay.scenarios].copy_from_slice(&q);
        coeffs[lay.lambda] = (kappa - kl_divergence(&q, p)).max(0.0);
        coeffs[lay.nu] = -1.0;
        Ok(Some((coeffs, value - risk.epsilon)))
    }
}

fn explain_infeasible(problem: &FairProblem) -> String {
    let sc = &problem.scenarios;
    let zero_caps: Vec<String> = (0..sc.len())
        .filter_map(|i| {
            let nodes = sc.node_caps[i].iter().filter(|c| **c == 0.0).count();
            let links = sc.link_caps[i].iter().filter(|c| **c == 0.0).count();
            (nodes + links > 0)
                .then(|| format!("scenario {} has {nodes} zero-capacity nodes and {links} zero-capacity links", i + 1))
        })
        .collect();
    let mut msg = format!(
        "no routing gives every community at least x_min = {} under the capacity scenarios with epsilon = {}",
        problem.config.x_min, problem.risk.epsilon
    );
    if !zero_caps.is_empty() {
        msg.push_str(" (");
        msg.push_str(&zero_caps.join("; "));
        msg.push(')');
    }
    msg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub w: Vec<f64>,
    pub lambda: f64,
    pub nu: f64,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub certificate: Certificate,
}

impl FlowSolution {
    fn from_vector(problem: &FairProblem, lay: &VarLayout, v: &[f64]) -> Self {
        let z = v[lay.z..lay.z + lay.routes].to_vec();
        FlowSolution {
            x: problem.allocation(&z),
            y: v[lay.y..lay.y + lay.links].to_vec(),
            z,
            certificate: Certificate {
                w: v[lay.w..lay.w + lay.scenarios].to_vec(),
                lambda: v[lay.lambda],
                nu: v[lay.nu],
                h: v[lay.h..lay.h + lay.scenarios].to_vec(),
            },
        }
    }
}

/// Constraint residuals of a solution, all reported as nonnegative excesses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Residuals {
    /// `max |Ey|`.
    pub balance: f64,
    /// `max (Fz − y)⁺`.
    pub payload: f64,
    /// `max (−y, −z)⁺`.
    pub negativity: f64,
    /// Largest excess over the `h`-inflated capacities.
    pub capacity: f64,
    /// `max (h − w + ν)⁺`.
    pub certificate_gap: f64,
    /// `λ g*_δ(w/λ) − ν`, to be compared with `ε`.
    pub certificate_value: f64,
    /// Violation levels recomputed from `y`.
    pub h_star: Vec<f64>,
    /// `ρ_δ(y)` recomputed by envelope maximization.
    pub rho: f64,
    pub epsilon: f64,
}

impl Residuals {
    /// Balanced flow, payload cover and risk bound at the acceptance
    /// tolerances.
    pub fn feasible(&self) -> bool {
        self.balance <= 1e-8
            && self.payload <= 1e-8
            && self.negativity <= 1e-12
            && self.capacity <= 1e-8
            && self.certificate_gap <= 1e-10
            && self.certificate_value <= self.epsilon + 1e-6
            && self.rho <= self.epsilon + 1e-6
    }
}

pub fn compute_residuals(problem: &FairProblem, sol: &FlowSolution) -> Result<Residuals, SolveError> {
    let inc = &problem.incidence;
    let sc = &problem.scenarios;
    let risk = problem.risk;
    let cert = &sol.certificate;
    let balance = mat_vec(&inc.e, &sol.y).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let fz = mat_vec(&inc.f, &sol.z);
    let payload = fz.iter().zip(&sol.y).fold(0.0f64, |a, (f, y)| a.max(f - y));
    let negativity = sol.y.iter().chain(&sol.z).fold(0.0f64, |a, v| a.max(-v));
    let inflow = mat_vec(&inc.k, &sol.y);
    let mut capacity = 0.0f64;
    for i in 0..sc.len() {
        let grow = 1.0 + cert.h[i];
        for (load, c) in inflow.iter().zip(&sc.node_caps[i]) {
            capacity = capacity.max(load - grow * c);
        }
        for (load, d) in sol.y.iter().zip(&sc.link_caps[i]) {
            capacity = capacity.max(load - grow * d);
        }
    }
    let certificate_gap = (0..sc.len()).fold(0.0f64, |a, i| a.max(cert.h[i] - cert.w[i] + cert.nu));
    let certificate_value =
        perspective_conjugate(risk.kind, risk.delta, &cert.w, cert.lambda, &sc.probs, 1e-9)? - cert.nu;
    let h_star = violation_levels_tol(problem, &sol.y, 1e-9);
    let rho = if h_star.iter().all(|h| h.is_finite()) {
        rho_primal(&h_star, &sc.probs, risk.kind, risk.delta)?.rho
    } else {
        f64::INFINITY
    };
    Ok(Residuals {
        balance,
        payload,
        negativity,
        capacity,
        certificate_gap,
        certificate_value,
        h_star,
        rho,
        epsilon: risk.epsilon,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FairnessMetrics {
    pub total: f64,
    pub min_share: f64,
    pub max_share: f64,
    pub jain_index: f64,
    pub min_allocation: f64,
}

impl FairnessMetrics {
    /// Shares are `x_k / Σx`; the Jain index is `(Σx)² / (n Σx²)`.
    pub fn of(x: &[f64]) -> Self {
        let total: f64 = x.iter().sum();
        let squares: f64 = x.iter().map(|v| v * v).sum();
        let min_allocation = x.iter().copied().fold(f64::INFINITY, f64::min);
        let max_allocation = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (min_share, max_share) = if total > 0.0 {
            (min_allocation / total, max_allocation / total)
        } else {
            (0.0, 0.0)
        };
        let jain_index = if squares > 0.0 {
            total * total / (x.len() as f64 * squares)
        } else {
            1.0
        };
        FairnessMetrics {
            total,
            min_share,
            max_share,
            jain_index,
            min_allocation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    /// `Σψ_α(x)` for fair solves, `Σx` for max-sum.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_gap: f64,
    pub gap_trace: Vec<f64>,
    pub best_gap_trace: Vec<f64>,
    pub objective_trace: Vec<f64>,
    pub wall_time_secs: f64,
    pub residuals: Residuals,
    pub allocations: Vec<f64>,
    pub metrics: FairnessMetrics,
    pub lambda_bound_active: bool,
    pub cuts_added: usize,
    pub lp_pivots: usize,
}

struct Trace {
    gaps: Vec<f64>,
    best_gaps: Vec<f64>,
    objectives: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn finish(
    problem: &FairProblem,
    lay: &VarLayout,
    v: &[f64],
    objective: f64,
    iterations: usize,
    converged: bool,
    trace: Trace,
    oracle: &Oracle<'_>,
    started: Instant,
) -> Result<(FlowSolution, SolveReport), SolveError> {
    let sol = FlowSolution::from_vector(problem, lay, v);
    let residuals = compute_residuals(problem, &sol)?;
    let lambda_max = 10.0 * (1.0 + problem.risk.epsilon / problem.scenarios.probs.iter().copied().fold(f64::INFINITY, f64::min));
    let report = SolveReport {
        objective,
        iterations,
        converged,
        final_gap: trace.gaps.last().copied().unwrap_or(0.0),
        gap_trace: trace.gaps,
        best_gap_trace: trace.best_gaps,
        objective_trace: trace.objectives,
        wall_time_secs: started.elapsed().as_secs_f64(),
        residuals,
        allocations: sol.x.clone(),
        metrics: FairnessMetrics::of(&sol.x),
        lambda_bound_active: sol.certificate.lambda >= lambda_max * (1.0 - 1e-9),
        cuts_added: oracle.cuts,
        lp_pivots: oracle.pivots,
    };
    Ok((sol, report))
}

fn combine(a: &[f64], b: &[f64], gamma: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(u, v)| u + gamma * (v - u)).collect()
}

/// Exact maximization of `γ ↦ Σψ(x + γd)` over `[0, γ_max]` by bisection on
/// the derivative.
fn line_search(x: &[f64], d: &[f64], alpha: f64, gamma_max: f64) -> f64 {
    let slope = |g: f64| -> f64 {
        x.iter()
            .zip(d)
            .map(|(xk, dk)| dk * (xk + g * dk).max(f64::MIN_POSITIVE).powf(-alpha))
            .sum()
    };
    if slope(0.0) <= 0.0 {
        return 0.0;
    }
    if slope(gamma_max) >= 0.0 {
        return gamma_max;
    }
    let (mut lo, mut hi) = (0.0, gamma_max);
    while hi - lo > 1e-10 * gamma_max.max(1e-300) {
        let mid = 0.5 * (lo + hi);
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Convex-hull master problem: weights over vertices, improved by moving
/// mass from the worst active vertex to the best one.
struct ActiveSet {
    atoms: Vec<Vec<f64>>,
    xs: Vec<Vec<f64>>,
    mu: Vec<f64>,
}

impl ActiveSet {
    fn point(&self, dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        for (a, m) in self.atoms.iter().zip(&self.mu) {
            for (vi, ai) in v.iter_mut().zip(a) {
                *vi += m * ai;
            }
        }
        v
    }

    fn x(&self) -> Vec<f64> {
        let n = self.xs[0].len();
        let mut x = vec![0.0; n];
        for (a, m) in self.xs.iter().zip(&self.mu) {
            for (xi, ai) in x.iter_mut().zip(a) {
                *xi += m * ai;
            }
        }
        x
    }

    fn add(&mut self, atom: Vec<f64>, x: Vec<f64>) {
        let same = self
            .atoms
            .iter()
            .any(|a| a.iter().zip(&atom).all(|(u, v)| (u - v).abs() <= 1e-12 * (1.0 + u.abs())));
        if !same {
            self.atoms.push(atom);
            self.xs.push(x);
            self.mu.push(0.0);
        }
    }

    fn optimize(&mut self, alpha: f64, tol: f64, max_steps: usize) {
        for _ in 0..max_steps {
            let x = self.x();
            let g = gradient(&x, alpha);
            let score: Vec<f64> = self.xs.iter().map(|a| dot(&g, a)).collect();
            let best = (0..score.len())
                .max_by(|&a, &b| score[a].total_cmp(&score[b]))
                .expect("active set is nonempty");
            let worst = (0..score.len())
                .filter(|&j| self.mu[j] > 0.0)
                .min_by(|&a, &b| score[a].total_cmp(&score[b]))
                .expect("some weight is positive");
            if score[best] - score[worst] <= tol || best == worst {
                break;
            }
            let d: Vec<f64> = self.xs[best].iter().zip(&self.xs[worst]).map(|(a, b)| a - b).collect();
            let gamma = line_search(&x, &d, alpha, self.mu[worst]);
            if gamma <= 0.0 {
                break;
            }
            self.mu[best] += gamma;
            self.mu[worst] -= gamma;
            if self.mu[worst] <= 1e-15 {
                self.mu[worst] = 0.0;
            }
        }
        let keep: Vec<bool> = self.mu.iter().map(|m| *m > 0.0).collect();
        let mut idx = 0;
        self.atoms.retain(|_| {
            idx += 1;
            keep[idx - 1]
        });
        idx = 0;
        self.xs.retain(|_| {
            idx += 1;
            keep[idx - 1]
        });
        self.mu.retain(|m| *m > 0.0);
        let total: f64 = self.mu.iter().sum();
        self.mu.iter_mut().for_each(|m| *m /= total);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Checks that the feasible set is nonempty without optimizing anything.
pub fn preflight(problem: &FairProblem) -> Result<(), SolveError> {
    Oracle::new(problem).map(|_| ())
}

/// Maximizes `Σ ψ_α(x_k)` by Frank-Wolfe and returns the best iterate.
pub fn solve_fair(problem: &FairProblem) -> Result<(FlowSolution, SolveReport), SolveError> {
    let started = Instant::now();
    let cfg = problem.config;
    let alpha = problem.alpha;
    let mut oracle = Oracle::new(problem)?;
    let lay = oracle.layout;
    let nc = problem.network.community_count;
    let x_of = |v: &[f64]| problem.allocation(&v[lay.z..lay.z + lay.routes]);

    let mut v = oracle.maximize(&vec![1.0; nc])?;
    let mut active = ActiveSet {
        atoms: vec![v.clone()],
        xs: vec![x_of(&v)],
        mu: vec![1.0],
    };
    let mut trace = Trace {
        gaps: Vec::new(),
        best_gaps: Vec::new(),
        objectives: Vec::new(),
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut converged = false;
    let mut steps = 0;
    loop {
        let x = x_of(&v);
        let objective = total_utility(&x, alpha);
        let g = gradient(&x, alpha);
        let s = oracle.maximize(&g)?;
        let xs = x_of(&s);
        let gap = dot(&g, &xs) - dot(&g, &x);
        let best_gap = trace.best_gaps.last().map_or(gap, |b: &f64| b.min(gap));
        trace.gaps.push(gap);
        trace.best_gaps.push(best_gap);
        trace.objectives.push(objective);
        if best.as_ref().is_none_or(|(o, _)| objective >= *o) {
            best = Some((objective, v.clone()));
        }
        if gap <= cfg.gap_tol {
            converged = true;
            break;
        }
        if steps >= cfg.max_iters {
            break;
        }
        steps += 1;
        match cfg.step_rule {
            StepRule::LineSearch => {
                let d: Vec<f64> = xs.iter().zip(&x).map(|(a, b)| a - b).collect();
                let gamma = line_search(&x, &d, alpha, 1.0);
                v = combine(&v, &s, gamma);
            }
            StepRule::FullyCorrective => {
                active.add(s, xs);
                active.optimize(alpha, 0.01 * cfg.gap_tol, 10_000);
                v = active.point(lay.total);
            }
        }
    }
    let (objective, v) = best.expect("at least one iterate");
    // report the gap of the returned iterate
    let idx = trace.objectives.iter().rposition(|o| *o == objective).unwrap_or(0);
    let final_gap = trace.gaps[idx];
    let (sol, mut report) = finish(problem, &lay, &v, objective, steps, converged, trace, &oracle, started)?;
    report.final_gap = final_gap;
    Ok((sol, report))
}

/// Maximizes total served demand `Σx` over the same constraint system.
pub fn solve_maxsum(problem: &FairProblem) -> Result<(FlowSolution, SolveReport), SolveError> {
    let started = Instant::now();
    let mut oracle = Oracle::new(problem)?;
    let lay = oracle.layout;
    let v = oracle.maximize(&vec![1.0; problem.network.community_count])?;
    let total: f64 = problem.allocation(&v[lay.z..lay.z + lay.routes]).iter().sum();
    let trace = Trace {
        gaps: vec![0.0],
        best_gaps: vec![0.0],
        objectives: vec![total],
    };
    finish(problem, &lay, &v, total, 0, true, trace, &oracle, started)
}

/// Independent solves, run concurrently in parallel mode.
pub fn solve_many(
    problems: &[FairProblem],
    mode: ExecMode,
) -> Vec<Result<(FlowSolution, SolveReport), SolveError>> {
    exec::map_collect(mode, problems, solve_fair)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FairnessViolation {
    pub candidate: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FairnessCheck {
    pub tolerance: f64,
    pub candidates: usize,
    /// Largest `Σ (x_k − x*_k) / x*_k^α` over the sampled allocations.
    pub max_value: f64,
    pub violations: Vec<FairnessViolation>,
}

impl FairnessCheck {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Samples `candidates` feasible allocations (vertices maximizing random
/// nonnegative weights) and tests the variational inequality
/// `Σ (x_k − x*_k) / x*_k^α ≤ tol` against each.
pub fn check_alpha_fairness(
    x_star: &[f64],
    problem: &FairProblem,
    candidates: usize,
    seed: u64,
    tol: Option<f64>,
) -> Result<FairnessCheck, SolveError> {
    let nc = problem.network.community_count;
    if x_star.len() != nc {
        return Err(SolveError::InvalidProblem(format!(
            "allocation has {} entries, expected {nc}",
            x_star.len()
        )));
    }
    if let Some(&bad) = x_star.iter().find(|v| !(**v > 0.0)) {
        return Err(SolveError::Domain { value: bad });
    }
    let tolerance = tol.unwrap_or(10.0 * problem.config.gap_tol * nc as f64);
    let g = gradient(x_star, problem.alpha);
    let ids: Vec<usize> = (0..candidates).collect();
    let values = exec::map_init_collect(
        problem.config.exec,
        &ids,
        || Oracle::new(problem),
        |oracle, &i| -> Result<f64, SolveError> {
            let oracle = oracle.as_mut().map_err(|e| e.clone())?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let weights: Vec<f64> = (0..nc).map(|_| rng.gen::<f64>()).collect();
            let v = oracle.maximize(&weights)?;
            let lay = oracle.layout;
            let x = problem.allocation(&v[lay.z..lay.z + lay.routes]);
            Ok(x.iter().zip(x_star).zip(&g).map(|((a, b), gk)| (a - b) * gk).sum())
        },
    );
    let mut max_value = f64::NEG_INFINITY;
    let mut violations = Vec::new();
    for (i, value) in values.into_iter().enumerate() {
        let value = value?;
        max_value = max_value.max(value);
        if value > tolerance {
            violations.push(FairnessViolation { candidate: i, value });
        }
    }
    Ok(FairnessCheck {
        tolerance,
        candidates,
        max_value,
        violations,
    })
}
