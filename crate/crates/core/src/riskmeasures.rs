//! Capacity scenarios, violation levels and coherent risk measures.
//!
//! The risk of a vehicle flow `y` is computed in two steps. First every
//! scenario `i` gets a violation level `h*_i`, the smallest uniform inflation
//! of that scenario's capacities that makes `y` fit. Then the risk measure
//! takes the worst expectation of `h*` over a risk envelope `Q(δ) ⊆ Δ_N`
//! around the scenario probabilities `p`:
//!
//! | kind | envelope `g_δ(q) ≤ 0` | conjugate `g*_δ(r)` |
//! |------|------------------------|---------------------|
//! | CVaR | `max_i |q_i|/p_i − 1/(1−δ)` | `1/(1−δ)` if `Σ p_i|r_i| ≤ 1` |
//! | EVaR | `KL(q‖p) + ln(1−δ)` on the simplex | `−ln(1−δ) + ln pᵀe^r` |
//! | TV   | `‖q − p‖₁ − 2δ` | `2δ + pᵀr` if `‖r‖∞ ≤ 1` |
//!
//! [`rho_primal`] maximizes over the envelope directly; [`rho_dual`] solves
//! the conjugate-based minimization. The two are computed along
//! independent routes and must agree.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, ExecMode};
use crate::lpcore::{lp_solve, LinearProgram, LpError, LpStatus, Sense};
use crate::network::mat_vec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("delta {delta} out of range for {kind}")]
    DeltaOutOfRange { kind: RiskKind, delta: f64 },
    #[error("epsilon must be finite and nonnegative, got {0}")]
    InvalidEpsilon(f64),
    #[error("invalid scenario set: {0}")]
    InvalidScenarios(String),
    #[error("hard-infeasible scenario {scenario}: flow on a zero-capacity element")]
    HardInfeasible { scenario: usize },
    #[error("negative or non-finite flow on link {link}")]
    InvalidFlow { link: usize },
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("dual LP ended with status {0:?}")]
    DualStatus(LpStatus),
}

/// Tolerance on `Σp = 1`.
pub const PROB_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskKind {
    Cvar,
    Evar,
    Tv,
}

impl std::fmt::Display for RiskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RiskKind::Cvar => "cvar",
            RiskKind::Evar => "evar",
            RiskKind::Tv => "tv",
        })
    }
}

impl std::str::FromStr for RiskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cvar" => Ok(RiskKind::Cvar),
            "evar" => Ok(RiskKind::Evar),
            "tv" => Ok(RiskKind::Tv),
            other => Err(format!("unknown risk measure '{other}' (expected cvar|evar|tv)")),
        }
    }
}

/// Checks `δ` against the admissible range: `(0, 1)` for CVaR/EVaR,
/// `[0, 1]` for TV.
pub fn check_delta(kind: RiskKind, delta: f64) -> Result<(), RiskError> {
    let ok = match kind {
        RiskKind::Cvar | RiskKind::Evar => delta > 0.0 && delta < 1.0,
        RiskKind::Tv => (0.0..=1.0).contains(&delta),
    };
    if ok {
        Ok(())
    } else {
        Err(RiskError::DeltaOutOfRange { kind, delta })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSpec {
    pub kind: RiskKind,
    pub delta: f64,
    pub epsilon: f64,
}

impl RiskSpec {
    pub fn new(kind: RiskKind, delta: f64, epsilon: f64) -> Result<Self, RiskError> {
        check_delta(kind, delta)?;
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(RiskError::InvalidEpsilon(epsilon));
        }
        Ok(RiskSpec { kind, delta, epsilon })
    }
}

/// `N` capacity outcomes with strictly positive probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub node_caps: Vec<Vec<f64>>,
    pub link_caps: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

impl ScenarioSet {
    pub fn new(
        node_caps: Vec<Vec<f64>>,
        link_caps: Vec<Vec<f64>>,
        probs: Vec<f64>,
    ) -> Result<Self, RiskError> {
        let s = ScenarioSet {
            node_caps,
            link_caps,
            probs,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn validate(&self) -> Result<(), RiskError> {
        let bad = |m: String| Err(RiskError::InvalidScenarios(m));
        let n = self.probs.len();
        if n == 0 {
            return bad("no scenarios".into());
        }
        if self.node_caps.len() != n || self.link_caps.len() != n {
            return bad("capacity and probability counts differ".into());
        }
        for (i, &p) in self.probs.iter().enumerate() {
            if !(p.is_finite() && p > 0.0) {
                return bad(format!("scenario {}: probability must be positive, got {p}", i + 1));
            }
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return bad(format!("probabilities sum to {total}, not 1"));
        }
        let nn = self.node_caps[0].len();
        let nl = self.link_caps[0].len();
        for i in 0..n {
            if self.node_caps[i].len() != nn || self.link_caps[i].len() != nl {
                return bad(format!("scenario {}: capacity dimensions differ", i + 1));
            }
            let caps = self.node_caps[i].iter().chain(&self.link_caps[i]);
            if caps.clone().any(|c| !(c.is_finite() && *c >= 0.0)) {
                return bad(format!("scenario {}: capacities must be finite and nonnegative", i + 1));
            }
        }
        Ok(())
    }

    /// Checks the capacity vectors against a network's node and link counts.
    pub fn check_dims(&self, nodes: usize, links: usize) -> Result<(), RiskError> {
        for i in 0..self.len() {
            if self.node_caps[i].len() != nodes {
                return Err(RiskError::DimensionMismatch {
                    what: "node capacities",
                    expected: nodes,
                    got: self.node_caps[i].len(),
                });
            }
            if self.link_caps[i].len() != links {
                return Err(RiskError::DimensionMismatch {
                    what: "link capacities",
                    expected: links,
                    got: self.link_caps[i].len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskEvaluation {
    pub h_star: Vec<f64>,
    pub rho: f64,
    pub maximizing_q: Vec<f64>,
}

/// Smallest `h ≥ 0` with `K y ≤ (1+h) c` and `y ≤ (1+h) d`.
///
/// Returns `f64::INFINITY` when a zero-capacity node or link carries flow,
/// since no finite inflation fixes that.
pub fn violation_level(
    k: &DMatrix<f64>,
    y: &[f64],
    node_caps: &[f64],
    link_caps: &[f64],
) -> Result<f64, RiskError> {
    if y.len() != k.ncols() {
        return Err(RiskError::DimensionMismatch {
            what: "flow",
            expected: k.ncols(),
            got: y.len(),
        });
    }
    if node_caps.len() != k.nrows() {
        return Err(RiskError::DimensionMismatch {
            what: "node capacities",
            expected: k.nrows(),
            got: node_caps.len(),
        });
    }
    if link_caps.len() != y.len() {
        return Err(RiskError::DimensionMismatch {
            what: "link capacities",
            expected: y.len(),
            got: link_caps.len(),
        });
    }
    if let Some(link) = y.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(RiskError::InvalidFlow { link });
    }
    let inflow = mat_vec(k, y);
    let mut level = 0.0f64;
    for (load, cap) in inflow.iter().zip(node_caps).chain(y.iter().zip(link_caps)) {
        if *cap > 0.0 {
            level = level.max(load / cap - 1.0);
        } else if *load > 0.0 {
            return Ok(f64::INFINITY);
        }
    }
    Ok(level)
}

/// [`violation_level`] for every scenario.
pub fn violation_levels(
    k: &DMatrix<f64>,
    y: &[f64],
    scenarios: &ScenarioSet,
    mode: ExecMode,
) -> Result<Vec<f64>, RiskError> {
    let idx: Vec<usize> = (0..scenarios.len()).collect();
    exec::map_collect(mode, &idx, |&i| {
        violation_level(k, y, &scenarios.node_caps[i], &scenarios.link_caps[i])
    })
    .into_iter()
    .collect()
}

fn check_pair(q: &[f64], p: &[f64]) -> Result<(), RiskError> {
    if q.len() != p.len() {
        return Err(RiskError::DimensionMismatch {
            what: "probability vector",
            expected: p.len(),
            got: q.len(),
        });
    }
    Ok(())
}

/// Envelope function `g_δ(q)`; the envelope is `{q ∈ Δ_N : g_δ(q) ≤ 0}`.
pub fn envelope_g(kind: RiskKind, delta: f64, q: &[f64], p: &[f64]) -> Result<f64, RiskError> {
    check_delta(kind, delta)?;
    check_pair(q, p)?;
    Ok(match kind {
        RiskKind::Cvar => {
            let ratio = q
                .iter()
                .zip(p)
                .map(|(qi, pi)| qi.abs() / pi)
                .fold(0.0, f64::max);
            ratio - 1.0 / (1.0 - delta)
        }
        RiskKind::Evar => {
            let total: f64 = q.iter().sum();
            if q.iter().any(|&qi| qi < 0.0) || (total - 1.0).abs() > PROB_SUM_TOL {
                return Ok(f64::INFINITY);
            }
            kl_divergence(q, p) + (-delta).ln_1p()
        }
        RiskKind::Tv => {
            q.iter().zip(p).map(|(qi, pi)| (qi - pi).abs()).sum::<f64>() - 2.0 * delta
        }
    })
}

/// Convex conjugate `g*_δ(r) = sup_q qᵀr − g_δ(q)`.
pub fn conjugate_g(kind: RiskKind, delta: f64, r: &[f64], p: &[f64]) -> Result<f64, RiskError> {
    check_delta(kind, delta)?;
    check_pair(r, p)?;
    Ok(match kind {
        RiskKind::Cvar => {
            let weighted: f64 = r.iter().zip(p).map(|(ri, pi)| (pi * ri).abs()).sum();
            if weighted <= 1.0 {
                1.0 / (1.0 - delta)
            } else {
                f64::INFINITY
            }
        }
        RiskKind::Evar => -(-delta).ln_1p() + log_mean_exp(p, r),
        RiskKind::Tv => {
            if r.iter().all(|ri| ri.abs() <= 1.0) {
                2.0 * delta + dot(r, p)
            } else {
                f64::INFINITY
            }
        }
    })
}

/// Perspective `λ g*_δ(w/λ)`, with its lower-semicontinuous closure at
/// `λ = 0`. Domain tests on CVaR/TV allow a relative slack `tol`.
pub fn perspective_conjugate(
    kind: RiskKind,
    delta: f64,
    w: &[f64],
    lambda: f64,
    p: &[f64],
    tol: f64,
) -> Result<f64, RiskError> {
    check_delta(kind, delta)?;
    check_pair(w, p)?;
    let scale = 1.0 + w.iter().fold(lambda.abs(), |a, v| a.max(v.abs()));
    let slack = tol * scale;
    if lambda < -slack {
        return Ok(f64::INFINITY);
    }
    let lambda = lambda.max(0.0);
    Ok(match kind {
        RiskKind::Cvar => {
            let weighted: f64 = w.iter().zip(p).map(|(wi, pi)| (pi * wi).abs()).sum();
            if weighted <= lambda + slack {
                lambda / (1.0 - delta)
            } else {
                f64::INFINITY
            }
        }
        RiskKind::Tv => {
            if w.iter().all(|wi| wi.abs() <= lambda + slack) {
                2.0 * delta * lambda + dot(w, p)
            } else {
                f64::INFINITY
            }
        }
        RiskKind::Evar => {
            let kappa = -(-delta).ln_1p();
            let top = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if lambda == 0.0 {
                top
            } else {
                let shifted: Vec<f64> = w.iter().map(|wi| (wi - top) / lambda).collect();
                top + lambda * log_mean_exp(p, &shifted) + lambda * kappa
            }
        }
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ln Σ p_i e^{r_i}` without overflow.
pub(crate) fn log_mean_exp(p: &[f64], r: &[f64]) -> f64 {
    let top = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return top;
    }
    let s: f64 = p.iter().zip(r).map(|(pi, ri)| pi * (ri - top).exp()).sum();
    top + s.ln()
}

/// `Σ q_i ln(q_i/p_i)` with `0 ln 0 = 0`.
pub(crate) fn kl_divergence(q: &[f64], p: &[f64]) -> f64 {
    q.iter()
        .zip(p)
        .filter(|(qi, _)| **qi > 0.0)
        .map(|(qi, pi)| qi * (qi / pi).ln())
        .sum()
}

fn check_inputs(h: &[f64], p: &[f64]) -> Result<Vec<f64>, RiskError> {
    check_pair(h, p)?;
    if h.is_empty() {
        return Err(RiskError::InvalidScenarios("no scenarios".into()));
    }
    if let Some(i) = h.iter().position(|v| !v.is_finite()) {
        return Err(RiskError::HardInfeasible { scenario: i });
    }
    if p.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(RiskError::InvalidScenarios("probabilities must be positive".into()));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > PROB_SUM_TOL {
        return Err(RiskError::InvalidScenarios(format!("probabilities sum to {total}")));
    }
    Ok(p.iter().map(|v| v / total).collect())
}

/// Indices sorted by `h` descending, lowest index first among ties.
fn order_desc(h: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..h.len()).collect();
    idx.sort_by(|&a, &b| h[b].partial_cmp(&h[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    idx
}

/// Risk measure by direct maximization over the envelope.
pub fn rho_primal(
    h_star: &[f64],
    p: &[f64],
    kind: RiskKind,
    delta: f64,
) -> Result<RiskEvaluation, RiskError> {
    check_delta(kind, delta)?;
    let p = check_inputs(h_star, p)?;
    let q = match kind {
        RiskKind::Cvar => cvar_maximizer(h_star, &p, delta),
        RiskKind::Tv => tv_maximizer(h_star, &p, delta),
        RiskKind::Evar => evar_maximizer(h_star, &p, delta),
    };
    Ok(RiskEvaluation {
        h_star: h_star.to_vec(),
        rho: dot(&q, h_star),
        maximizing_q: q,
    })
}

/// Fills mass `p_i/(1−δ)` onto the largest entries first.
fn cvar_maximizer(h: &[f64], p: &[f64], delta: f64) -> Vec<f64> {
    let mut q = vec![0.0; h.len()];
    let mut remaining = 1.0;
    for i in order_desc(h) {
        if remaining <= 0.0 {
            break;
        }
        let take = (p[i] / (1.0 - delta)).min(remaining);
        q[i] = take;
        remaining -= take;
    }
    q
}

/// Moves up to `δ` mass from the smallest entries onto the largest.
fn tv_maximizer(h: &[f64], p: &[f64], delta: f64) -> Vec<f64> {
    let order = order_desc(h);
    let top = order[0];
    let mut q = p.to_vec();
    let mut budget = delta.min(1.0 - p[top]);
    let mut moved = 0.0;
    for &i in order.iter().rev() {
        if i == top || budget <= 0.0 {
            continue;
        }
        let take = q[i].min(budget);
        q[i] -= take;
        budget -= take;
        moved += take;
    }
    q[top] += moved;
    q
}

/// Gibbs tilt `q ∝ p e^{θ h}` evaluated around `shift`; returns `(q, KL(q‖p))`.
fn tilt(h: &[f64], p: &[f64], theta: f64, shift: f64) -> (Vec<f64>, f64) {
    let a: Vec<f64> = h.iter().map(|hi| theta * (hi - shift)).collect();
    let em1: f64 = p.iter().zip(&a).map(|(pi, ai)| pi * ai.exp_m1()).sum();
    let log_z = em1.ln_1p();
    let z = 1.0 + em1;
    let q: Vec<f64> = p.iter().zip(&a).map(|(pi, ai)| pi * ai.exp() / z).collect();
    let mean_shifted: f64 = q.iter().zip(h).map(|(qi, hi)| qi * (hi - shift)).sum();
    let kl = (theta * mean_shifted - log_z).max(0.0);
    (q, kl)
}

/// Maximizes `qᵀh` subject to `KL(q‖p) ≤ −ln(1−δ)` by locating the Gibbs
/// tilt whose divergence equals the budget.
fn evar_maximizer(h: &[f64], p: &[f64], delta: f64) -> Vec<f64> {
    let kappa = -(-delta).ln_1p();
    let top = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bottom = h.iter().copied().fold(f64::INFINITY, f64::min);
    let mass_at_top: f64 = h.iter().zip(p).filter(|(hi, _)| **hi == top).map(|(_, pi)| pi).sum();
    if top == bottom || -mass_at_top.ln() <= kappa {
        return h
            .iter()
            .zip(p)
            .map(|(hi, pi)| if *hi == top { pi / mass_at_top } else { 0.0 })
            .collect();
    }
    let mean = dot(h, p);
    let range = top - bottom;
    let eval = |theta: f64| {
        let shift = if theta * (top - mean) <= 1.0 { mean } else { top };
        tilt(h, p, theta, shift)
    };
    let mut lo = 0.0;
    let mut hi = 1.0 / range;
    let mut hi_eval = eval(hi);
    let mut grow = 0;
    while hi_eval.1 < kappa {
        lo = hi;
        hi *= 2.0;
        hi_eval = eval(hi);
        grow += 1;
        if grow > 2000 || !hi.is_finite() {
            return eval(lo).0;
        }
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if eval(mid).1 <= kappa {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    eval(lo).0
}

/// Risk measure through the conjugate-based dual minimization.
///
/// CVaR and TV become small LPs; EVaR reduces to the one-dimensional
/// `min_{λ>0} λ ln(pᵀ e^{h/λ}) − λ ln(1−δ)`.
pub fn rho_dual(h_star: &[f64], p: &[f64], kind: RiskKind, delta: f64) -> Result<f64, RiskError> {
    check_delta(kind, delta)?;
    let p = check_inputs(h_star, p)?;
    match kind {
        RiskKind::Cvar | RiskKind::Tv => dual_lp(h_star, &p, kind, delta),
        RiskKind::Evar => Ok(evar_dual(h_star, &p, delta).0),
    }
}

/// EVaR dual value together with the minimizing `λ` (0 when the infimum is
/// the `λ → 0⁺` limit `max h`).
pub fn evar_dual_minimizer(h_star: &[f64], p: &[f64], delta: f64) -> Result<(f64, f64), RiskError> {
    check_delta(RiskKind::Evar, delta)?;
    let p = check_inputs(h_star, p)?;
    Ok(evar_dual(h_star, &p, delta))
}

/// Variables: `w (N), λ, ν` and for CVaR `t (N)` with `t ≥ |p ∘ w|`.
fn dual_lp(h: &[f64], p: &[f64], kind: RiskKind, delta: f64) -> Result<f64, RiskError> {
    let n = h.len();
    let lam = n;
    let nu = n + 1;
    let nvars = if kind == RiskKind::Cvar { 2 * n + 2 } else { n + 2 };
    let mut lp = LinearProgram::new(nvars, Sense::Minimize);
    for j in 0..n {
        lp.set_bounds(j, f64::NEG_INFINITY, f64::INFINITY);
    }
    lp.set_bounds(nu, f64::NEG_INFINITY, f64::INFINITY);
    lp.objective[nu] = -1.0;
    let row = || vec![0.0; nvars];
    // w_i - ν >= h_i
    for i in 0..n {
        let mut r = row();
        r[i] = -1.0;
        r[nu] = 1.0;
        lp.add_le(r, -h[i]);
    }
    match kind {
        RiskKind::Cvar => {
            lp.objective[lam] = 1.0 / (1.0 - delta);
            let mut sum = row();
            for i in 0..n {
                let t = n + 2 + i;
                for sign in [1.0, -1.0] {
                    let mut r = row();
                    r[i] = sign * p[i];
                    r[t] = -1.0;
                    lp.add_le(r, 0.0);
                }
                sum[t] = 1.0;
            }
            sum[lam] = -1.0;
            lp.add_le(sum, 0.0);
        }
        RiskKind::Tv => {
            lp.objective[lam] = 2.0 * delta;
            lp.objective[..n].copy_from_slice(p);
            for i in 0..n {
                for sign in [1.0, -1.0] {
                    let mut r = row();
                    r[i] = sign;
                    r[lam] = -1.0;
                    lp.add_le(r, 0.0);
                }
            }
        }
        RiskKind::Evar => unreachable!("EVaR has a closed-form dual"),
    }
    let res = lp_solve(&lp)?;
    if res.status != LpStatus::Optimal {
        return Err(RiskError::DualStatus(res.status));
    }
    Ok(res.objective)
}

/// `λ ln(pᵀe^{h/λ}) + κλ`, written around `max h` for stability.
fn evar_objective(h: &[f64], p: &[f64], kappa: f64, top: f64, lambda: f64) -> f64 {
    let s: f64 = p
        .iter()
        .zip(h)
        .map(|(pi, hi)| pi * ((hi - top) / lambda).exp_m1())
        .sum();
    top + lambda * (s.ln_1p() + kappa)
}

fn evar_dual(h: &[f64], p: &[f64], delta: f64) -> (f64, f64) {
    let kappa = -(-delta).ln_1p();
    let top = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bottom = h.iter().copied().fold(f64::INFINITY, f64::min);
    let range = top - bottom;
    if range == 0.0 {
        return (top, 0.0);
    }
    let f = |lambda: f64| evar_objective(h, p, kappa, top, lambda);
    let mut lo = 1e-6 * range + 1e-12;
    let mut hi = 10.0 * range + 1.0;
    // The minimizer grows like 1/sqrt(κ) as δ → 0; widen until f turns up.
    let mut guard = 0;
    while f(2.0 * hi) < f(hi) && guard < 200 {
        hi *= 2.0;
        guard += 1;
    }
    while f(0.5 * lo) < f(lo) && lo > 1e-300 {
        lo *= 0.5;
    }
    // golden-section search in ln λ
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c.exp()), f(d.exp()));
    while (b - a) > 1e-10 * (1.0 + a.abs().max(b.abs())) {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c.exp());
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d.exp());
        }
    }
    // λ → 0⁺ tends to max h
    [(fc, c.exp()), (fd, d.exp()), (f(lo), lo), (f(hi), hi), (top, 0.0)]
        .into_iter()
        .fold((f64::INFINITY, 0.0), |best, cand| if cand.0 < best.0 { cand } else { best })
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn violation_level_examples() {
        let k = DMatrix::from_element(1, 1, 1.0);
        // Ky = 10 with y = 4 is impossible for a 1x1 K; use K = [2.5]
        let k25 = DMatrix::from_element(1, 1, 2.5);
        assert_abs_diff_eq!(violation_level(&k25, &[4.0], &[8.0], &[5.0]).unwrap(), 0.25);
        assert_eq!(violation_level(&k, &[1.0], &[2.0], &[3.0]).unwrap(), 0.0);
        assert_eq!(violation_level(&k, &[1.0], &[0.0], &[3.0]).unwrap(), f64::INFINITY);
        assert!(matches!(
            violation_level(&k, &[1.0, 2.0], &[1.0], &[1.0]),
            Err(RiskError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn envelope_examples() {
        let p = [0.2, 0.3, 0.5];
        for d in [0.0, 0.4, 1.0] {
            assert_abs_diff_eq!(envelope_g(RiskKind::Tv, d, &p, &p).unwrap(), -2.0 * d);
        }
        let g = envelope_g(RiskKind::Cvar, 0.5, &[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(g, 0.0);
        let g = envelope_g(RiskKind::Evar, 0.5, &p, &p).unwrap();
        assert_abs_diff_eq!(g, 0.5f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(g, -0.6931, epsilon = 1e-4);
        let off = envelope_g(RiskKind::Evar, 0.5, &[0.6, 0.6, -0.2], &p).unwrap();
        assert_eq!(off, f64::INFINITY);
        let zero_entry = envelope_g(RiskKind::Evar, 0.5, &[0.0, 0.5, 0.5], &p).unwrap();
        assert!(zero_entry.is_finite());
        assert!(envelope_g(RiskKind::Cvar, 1.0, &p, &p).is_err());
        assert!(envelope_g(RiskKind::Evar, 0.0, &p, &p).is_err());
    }

    #[test]
    fn conjugate_examples() {
        let p = [0.25, 0.75];
        let v = conjugate_g(RiskKind::Evar, 0.5, &[0.0, 0.0], &p).unwrap();
        assert_abs_diff_eq!(v, 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.6931, epsilon = 1e-4);
        assert_abs_diff_eq!(conjugate_g(RiskKind::Tv, 0.3, &[0.0, 0.0], &p).unwrap(), 0.6);
        let v = conjugate_g(RiskKind::Cvar, 0.2, &[3.0, 0.0], &[0.5, 0.5]).unwrap();
        assert_eq!(v, f64::INFINITY);
        assert!(conjugate_g(RiskKind::Tv, 1.5, &[0.0, 0.0], &p).is_err());
    }

    #[test]
    fn conjugate_matches_brute_force_sup() {
        // sup_q qᵀr − g(q) over a fine grid of the 2-simplex and a box
        let p = [0.4, 0.6];
        let r = [0.7, -0.3];
        let delta = 0.35;
        let mut best = f64::NEG_INFINITY;
        for i in 0..=2000 {
            let q0 = i as f64 / 2000.0;
            let q = [q0, 1.0 - q0];
            let g = envelope_g(RiskKind::Evar, delta, &q, &p).unwrap();
            best = best.max(dot(&q, &r) - g);
        }
        let c = conjugate_g(RiskKind::Evar, delta, &r, &p).unwrap();
        assert!((best - c).abs() < 1e-6, "{best} vs {c}");
    }

    #[test]
    fn tv_at_zero_is_expectation() {
        let h = [0.3, 2.0, 1.0];
        let p = [0.2, 0.3, 0.5];
        let ev = rho_primal(&h, &p, RiskKind::Tv, 0.0).unwrap();
        assert_abs_diff_eq!(ev.rho, dot(&h, &p), epsilon = 1e-15);
        assert_eq!(ev.maximizing_q, p.to_vec());
        assert_abs_diff_eq!(rho_dual(&h, &p, RiskKind::Tv, 0.0).unwrap(), dot(&h, &p), epsilon = 1e-9);
    }

    #[test]
    fn cvar_two_point_example_against_grid() {
        let (h, p) = ([0.0, 1.0], [0.5, 0.5]);
        let ev = rho_primal(&h, &p, RiskKind::Cvar, 0.5).unwrap();
        // exhaustive grid over the 2-simplex restricted to the envelope
        let mut best = f64::NEG_INFINITY;
        for i in 0..=10_000 {
            let q0 = i as f64 / 10_000.0;
            let q = [q0, 1.0 - q0];
            if envelope_g(RiskKind::Cvar, 0.5, &q, &p).unwrap() <= 1e-12 {
                best = best.max(dot(&q, &h));
            }
        }
        assert_abs_diff_eq!(best, 1.0);
        assert_abs_diff_eq!(ev.rho, 1.0);
        assert_eq!(ev.maximizing_q, vec![0.0, 1.0]);
        assert_abs_diff_eq!(rho_dual(&h, &p, RiskKind::Cvar, 0.5).unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn constant_losses_have_constant_risk() {
        let p = [0.1, 0.2, 0.3, 0.4];
        for kind in [RiskKind::Cvar, RiskKind::Evar, RiskKind::Tv] {
            let ev = rho_primal(&[2.5; 4], &p, kind, 0.6).unwrap();
            assert_abs_diff_eq!(ev.rho, 2.5, epsilon = 1e-12);
            assert_abs_diff_eq!(rho_dual(&[2.5; 4], &p, kind, 0.6).unwrap(), 2.5, epsilon = 1e-9);
        }
        assert_eq!(rho_dual(&[0.0; 3], &[0.2, 0.3, 0.5], RiskKind::Evar, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn infinite_level_is_rejected() {
        let err = rho_primal(&[0.0, f64::INFINITY], &[0.5, 0.5], RiskKind::Cvar, 0.5);
        assert_eq!(err.unwrap_err(), RiskError::HardInfeasible { scenario: 1 });
        assert!(rho_dual(&[f64::INFINITY], &[1.0], RiskKind::Evar, 0.5).is_err());
    }

    #[test]
    fn evar_maximizer_lies_in_envelope() {
        let h = [0.0, 3.0, 1.0, 7.0];
        let p = [0.4, 0.3, 0.2, 0.1];
        for delta in [0.1, 0.5, 0.85] {
            let ev = rho_primal(&h, &p, RiskKind::Evar, delta).unwrap();
            let g = envelope_g(RiskKind::Evar, delta, &ev.maximizing_q, &p).unwrap();
            assert!(g <= 1e-9, "g = {g}");
            let dual = rho_dual(&h, &p, RiskKind::Evar, delta).unwrap();
            assert!((ev.rho - dual).abs() < 1e-8, "{} vs {}", ev.rho, dual);
        }
        // once the top outcome carries enough mass the envelope reaches it
        let ev = rho_primal(&h, &p, RiskKind::Evar, 0.95).unwrap();
        assert_abs_diff_eq!(ev.rho, 7.0);
    }

    #[test]
    fn perspective_closure_at_zero() {
        let p = [0.5, 0.5];
        let v = perspective_conjugate(RiskKind::Cvar, 0.5, &[0.0, 0.0], 0.0, &p, 0.0).unwrap();
        assert_eq!(v, 0.0);
        let v = perspective_conjugate(RiskKind::Cvar, 0.5, &[1.0, 0.0], 0.0, &p, 0.0).unwrap();
        assert_eq!(v, f64::INFINITY);
        let v = perspective_conjugate(RiskKind::Evar, 0.5, &[1.0, 3.0], 0.0, &p, 0.0).unwrap();
        assert_eq!(v, 3.0);
        let v = perspective_conjugate(RiskKind::Tv, 0.5, &[1.0, -1.0], 1.0, &p, 0.0).unwrap();
        assert_abs_diff_eq!(v, 1.0);
    }

    #[test]
    fn scenario_set_validation() {
        let ok = ScenarioSet::new(vec![vec![1.0]; 2], vec![vec![2.0]; 2], vec![0.4, 0.6]);
        assert!(ok.is_ok());
        let zero = ScenarioSet::new(vec![vec![1.0]; 2], vec![vec![2.0]; 2], vec![0.0, 1.0]);
        assert!(zero.is_err());
        let sum = ScenarioSet::new(vec![vec![1.0]; 2], vec![vec![2.0]; 2], vec![0.4, 0.5]);
        assert!(sum.is_err());
        let neg = ScenarioSet::new(vec![vec![-1.0]; 1], vec![vec![2.0]; 1], vec![1.0]);
        assert!(neg.is_err());
        assert!(RiskSpec::new(RiskKind::Tv, 0.0, 0.1).is_ok());
        assert!(RiskSpec::new(RiskKind::Cvar, 0.0, 0.1).is_err());
        assert!(RiskSpec::new(RiskKind::Cvar, 0.5, -0.1).is_err());
    }
}
