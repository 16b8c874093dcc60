//! Dense bounded-variable revised simplex.
//!
//! Problems are stated as
//!
//! ```text
//! minimize/maximize  cᵀv
//! subject to         A v ≤ b,   G v = g,   l ≤ v ≤ u
//! ```
//!
//! with infinite bounds allowed. Every row gets a slack (`[0, ∞)` for `≤`,
//! `[0, 0]` for `=`); rows whose slack cannot start basic-feasible get an
//! artificial variable, and phase 1 minimizes the artificial sum. The basis
//! inverse is kept as a dense row-major matrix and updated in product form,
//! with a periodic Gauss-Jordan refactorization.
//!
//! Pricing is Dantzig's rule until [`SimplexOptions::bland_after`]
//! consecutive degenerate pivots, then Bland's rule until the next
//! nondegenerate pivot.
//!
//! A [`Simplex`] can be re-solved after [`Simplex::set_objective`] (warm start
//! from the last basis) or after [`Simplex::add_le_row`] (the new row gets an
//! artificial if it cuts off the current point, and phase 1 resumes).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite entry in {what}")]
    NonFinite { what: &'static str },
    #[error("variable {var} has lower bound above upper bound")]
    InvalidBounds { var: usize },
    #[error("simplex stalled after {iterations} iterations")]
    Stalled { iterations: usize },
    #[error("basis matrix became singular")]
    Singular,
    #[error("malformed LP text at line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub ineq_rows: Vec<Vec<f64>>,
    pub ineq_rhs: Vec<f64>,
    pub eq_rows: Vec<Vec<f64>>,
    pub eq_rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    /// `num_vars` variables, zero objective, bounds `[0, ∞)`.
    pub fn new(num_vars: usize, sense: Sense) -> Self {
        LinearProgram {
            sense,
            objective: vec![0.0; num_vars],
            ineq_rows: Vec::new(),
            ineq_rhs: Vec::new(),
            eq_rows: Vec::new(),
            eq_rhs: Vec::new(),
            lower: vec![0.0; num_vars],
            upper: vec![f64::INFINITY; num_vars],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.ineq_rows.len() + self.eq_rows.len()
    }

    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) {
        self.ineq_rows.push(row);
        self.ineq_rhs.push(rhs);
    }

    pub fn add_ge(&mut self, row: Vec<f64>, rhs: f64) {
        self.add_le(row.into_iter().map(|a| -a).collect(), -rhs);
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        let dims = [
            ("lower bounds", self.lower.len()),
            ("upper bounds", self.upper.len()),
        ];
        for (what, got) in dims {
            if got != n {
                return Err(LpError::DimensionMismatch { what, expected: n, got });
            }
        }
        if self.ineq_rhs.len() != self.ineq_rows.len() {
            return Err(LpError::DimensionMismatch {
                what: "inequality rhs",
                expected: self.ineq_rows.len(),
                got: self.ineq_rhs.len(),
            });
        }
        if self.eq_rhs.len() != self.eq_rows.len() {
            return Err(LpError::DimensionMismatch {
                what: "equality rhs",
                expected: self.eq_rows.len(),
                got: self.eq_rhs.len(),
            });
        }
        for row in self.ineq_rows.iter().chain(&self.eq_rows) {
            if row.len() != n {
                return Err(LpError::DimensionMismatch {
                    what: "constraint row",
                    expected: n,
                    got: row.len(),
                });
            }
            if row.iter().any(|a| !a.is_finite()) {
                return Err(LpError::NonFinite { what: "constraint matrix" });
            }
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(LpError::NonFinite { what: "objective" });
        }
        if self.ineq_rhs.iter().chain(&self.eq_rhs).any(|b| !b.is_finite()) {
            return Err(LpError::NonFinite { what: "right-hand side" });
        }
        for j in 0..n {
            if self.lower[j].is_nan() || self.upper[j].is_nan() || self.lower[j] > self.upper[j] {
                return Err(LpError::InvalidBounds { var: j });
            }
            if self.lower[j] == f64::INFINITY || self.upper[j] == f64::NEG_INFINITY {
                return Err(LpError::InvalidBounds { var: j });
            }
        }
        Ok(())
    }

    /// Plain-text dump for reproducing solver failures; read back with
    /// [`LinearProgram::from_text`].
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(" ");
        let mut s = String::new();
        let sense = match self.sense {
            Sense::Minimize => "min",
            Sense::Maximize => "max",
        };
        let _ = writeln!(s, "lp {} {}", sense, self.num_vars());
        let _ = writeln!(s, "obj {}", join(&self.objective));
        let _ = writeln!(s, "lower {}", join(&self.lower));
        let _ = writeln!(s, "upper {}", join(&self.upper));
        for (row, b) in self.ineq_rows.iter().zip(&self.ineq_rhs) {
            let _ = writeln!(s, "le {} | {}", join(row), b);
        }
        for (row, b) in self.eq_rows.iter().zip(&self.eq_rhs) {
            let _ = writeln!(s, "eq {} | {}", join(row), b);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, LpError> {
        let parse_err = |line: usize, message: &str| LpError::Parse {
            line,
            message: message.to_string(),
        };
        let nums = |line: usize, s: &str| -> Result<Vec<f64>, LpError> {
            s.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| parse_err(line, "bad number")))
                .collect()
        };
        let mut lp: Option<LinearProgram> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let raw = raw.trim();
            if raw.is_empty() {
                continue;
            }
            let (tag, rest) = raw.split_once(' ').unwrap_or((raw, ""));
            if tag == "lp" {
                let mut it = rest.split_whitespace();
                let sense = match it.next() {
                    Some("min") => Sense::Minimize,
                    Some("max") => Sense::Maximize,
                    _ => return Err(parse_err(line, "expected min or max")),
                };
                let n = it
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| parse_err(line, "expected variable count"))?;
                lp = Some(LinearProgram::new(n, sense));
                continue;
            }
            let lp = lp.as_mut().ok_or_else(|| parse_err(line, "missing lp header"))?;
            match tag {
                "obj" => lp.objective = nums(line, rest)?,
                "lower" => lp.lower = nums(line, rest)?,
                "upper" => lp.upper = nums(line, rest)?,
                "le" | "eq" => {
                    let (lhs, rhs) = rest
                        .split_once('|')
                        .ok_or_else(|| parse_err(line, "missing '|'"))?;
                    let row = nums(line, lhs)?;
                    let b = rhs
                        .trim()
                        .parse::<f64>()
                        .map_err(|_| parse_err(line, "bad rhs"))?;
                    if tag == "le" {
                        lp.add_le(row, b);
                    } else {
                        lp.add_eq(row, b);
                    }
                }
                _ => return Err(parse_err(line, "unknown tag")),
            }
        }
        let lp = lp.ok_or_else(|| parse_err(0, "empty input"))?;
        lp.validate()?;
        Ok(lp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpResult {
    pub status: LpStatus,
    /// NaN unless optimal.
    pub objective: f64,
    /// Empty unless optimal.
    pub x: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub pivot_tol: f64,
    pub feas_tol: f64,
    pub opt_tol: f64,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub bland_after: usize,
    /// Per-solve cap; `None` means `50 * (rows + cols)`.
    pub max_iterations: Option<usize>,
    pub scaling: bool,
    pub refactor_every: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            pivot_tol: 1e-9,
            feas_tol: 1e-8,
            opt_tol: 1e-9,
            bland_after: 20,
            max_iterations: None,
            scaling: true,
            refactor_every: 400,
        }
    }
}

pub fn lp_solve(problem: &LinearProgram) -> Result<LpResult, LpError> {
    Simplex::new(problem, SimplexOptions::default())?.solve()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualReport {
    pub max_eq_residual: f64,
    pub max_ineq_violation: f64,
    pub max_bound_violation: f64,
    pub objective: f64,
}

/// Residuals of `candidate` against `problem`, in original units.
pub fn lp_check(problem: &LinearProgram, candidate: &[f64]) -> Result<ResidualReport, LpError> {
    if candidate.len() != problem.num_vars() {
        return Err(LpError::DimensionMismatch {
            what: "candidate",
            expected: problem.num_vars(),
            got: candidate.len(),
        });
    }
    let dot = |row: &[f64]| row.iter().zip(candidate).map(|(a, x)| a * x).sum::<f64>();
    let max_eq_residual = problem
        .eq_rows
        .iter()
        .zip(&problem.eq_rhs)
        .map(|(r, b)| (dot(r) - b).abs())
        .fold(0.0, f64::max);
    let max_ineq_violation = problem
        .ineq_rows
        .iter()
        .zip(&problem.ineq_rhs)
        .map(|(r, b)| (dot(r) - b).max(0.0))
        .fold(0.0, f64::max);
    let max_bound_violation = candidate
        .iter()
        .zip(problem.lower.iter().zip(&problem.upper))
        .map(|(&x, (&l, &u))| (l - x).max(x - u).max(0.0))
        .fold(0.0, f64::max);
    Ok(ResidualReport {
        max_eq_residual,
        max_ineq_violation,
        max_bound_violation,
        objective: dot(&problem.objective),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum VarKind {
    Structural,
    Slack(usize),
    /// Row and sign of the unit column.
    Artificial(usize, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable sitting at zero.
    Free,
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

/// Reusable simplex state over one constraint system.
#[derive(Debug, Clone)]
pub struct Simplex {
    opts: SimplexOptions,
    n_struct: usize,
    m: usize,
    cols: Vec<Vec<(usize, f64)>>,
    kinds: Vec<VarKind>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    status: Vec<Status>,
    value: Vec<f64>,
    basis: Vec<usize>,
    binv: Vec<f64>,
    rhs: Vec<f64>,
    row_scale: Vec<f64>,
    col_scale: Vec<f64>,
    objective: Vec<f64>,
    sense: Sense,
    needs_phase1: bool,
    pivots_since_refactor: usize,
}

fn pow2_scale(max_abs: f64) -> f64 {
    if max_abs > 0.0 && max_abs.is_finite() {
        2f64.powi(-(max_abs.log2().round() as i32))
    } else {
        1.0
    }
}

impl Simplex {
    pub fn new(problem: &LinearProgram, opts: SimplexOptions) -> Result<Self, LpError> {
        problem.validate()?;
        let n = problem.num_vars();
        let rows: Vec<(&Vec<f64>, f64, bool)> = problem
            .ineq_rows
            .iter()
            .zip(&problem.ineq_rhs)
            .map(|(r, &b)| (r, b, false))
            .chain(problem.eq_rows.iter().zip(&problem.eq_rhs).map(|(r, &b)| (r, b, true)))
            .collect();
        let m = rows.len();

        let mut row_scale = vec![1.0; m];
        let mut col_scale = vec![1.0; n];
        if opts.scaling {
            for (i, (row, _, _)) in rows.iter().enumerate() {
                row_scale[i] = pow2_scale(row.iter().fold(0.0, |a, v| f64::max(a, v.abs())));
            }
            for (j, cs) in col_scale.iter_mut().enumerate() {
                let mx = rows
                    .iter()
                    .enumerate()
                    .fold(0.0, |a, (i, (row, _, _))| f64::max(a, (row[j] * row_scale[i]).abs()));
                *cs = pow2_scale(mx);
            }
        }

        let mut cols = vec![Vec::new(); n];
        for (i, (row, _, _)) in rows.iter().enumerate() {
            for (j, &a) in row.iter().enumerate() {
                if a != 0.0 {
                    cols[j].push((i, a * row_scale[i] * col_scale[j]));
                }
            }
        }

        let mut s = Simplex {
            opts,
            n_struct: n,
            m,
            cols,
            kinds: vec![VarKind::Structural; n],
            lower: (0..n).map(|j| problem.lower[j] / col_scale[j]).collect(),
            upper: (0..n).map(|j| problem.upper[j] / col_scale[j]).collect(),
            cost: vec![0.0; n],
            status: vec![Status::AtLower; n],
            value: vec![0.0; n],
            basis: vec![usize::MAX; m],
            binv: vec![0.0; m * m],
            rhs: rows.iter().enumerate().map(|(i, r)| r.1 * row_scale[i]).collect(),
            row_scale,
            col_scale,
            objective: problem.objective.clone(),
            sense: problem.sense,
            needs_phase1: false,
            pivots_since_refactor: 0,
        };
        s.refresh_cost();

        for j in 0..n {
            let (st, v) = if s.lower[j].is_finite() {
                (Status::AtLower, s.lower[j])
            } else if s.upper[j].is_finite() {
                (Status::AtUpper, s.upper[j])
            } else {
                (Status::Free, 0.0)
            };
            s.status[j] = st;
            s.value[j] = v;
        }

        let mut residual = s.rhs.clone();
        for j in 0..n {
            let v = s.value[j];
            if v != 0.0 {
                for &(i, a) in &s.cols[j] {
                    residual[i] -= a * v;
                }
            }
        }
        for (i, (_, _, is_eq)) in rows.iter().enumerate() {
            let slack_upper = if *is_eq { 0.0 } else { f64::INFINITY };
            s.push_row_basic(i, residual[i], slack_upper);
        }
        Ok(s)
    }

    /// Adds the slack for row `i` (and an artificial if needed) and puts one
    /// of them in the basis at position `i`; `binv` row/column `i` must be
    /// zero on entry.
    fn push_row_basic(&mut self, i: usize, residual: f64, slack_upper: f64) {
        let tol = self.opts.feas_tol;
        let slack = self.kinds.len();
        self.kinds.push(VarKind::Slack(i));
        self.lower.push(0.0);
        self.upper.push(slack_upper);
        self.cost.push(0.0);
        let feasible = residual >= -tol && residual <= slack_upper + tol;
        if feasible {
            self.status.push(Status::Basic);
            self.value.push(residual);
            self.basis[i] = slack;
            self.binv[i * self.m + i] = 1.0;
        } else {
            self.status.push(Status::AtLower);
            self.value.push(0.0);
            let sign = if residual > 0.0 { 1.0 } else { -1.0 };
            let art = self.kinds.len();
            self.kinds.push(VarKind::Artificial(i, sign));
            self.lower.push(0.0);
            self.upper.push(f64::INFINITY);
            self.cost.push(0.0);
            self.status.push(Status::Basic);
            self.value.push(residual.abs());
            self.basis[i] = art;
            self.binv[i * self.m + i] = sign;
            self.needs_phase1 = true;
        }
    }

    fn refresh_cost(&mut self) {
        let sign = match self.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        for j in 0..self.n_struct {
            self.cost[j] = sign * self.objective[j] * self.col_scale[j];
        }
    }

    pub fn num_vars(&self) -> usize {
        self.n_struct
    }

    pub fn num_rows(&self) -> usize {
        self.m
    }

    /// Replaces the objective; the next [`Simplex::solve`] starts from the
    /// current basis.
    pub fn set_objective(&mut self, sense: Sense, objective: &[f64]) -> Result<(), LpError> {
        if objective.len() != self.n_struct {
            return Err(LpError::DimensionMismatch {
                what: "objective",
                expected: self.n_struct,
                got: objective.len(),
            });
        }
        if objective.iter().any(|c| !c.is_finite()) {
            return Err(LpError::NonFinite { what: "objective" });
        }
        self.sense = sense;
        self.objective = objective.to_vec();
        self.refresh_cost();
        Ok(())
    }

    /// Appends `coeffs · v ≤ rhs`.
    pub fn add_le_row(&mut self, coeffs: &[f64], rhs: f64) -> Result<(), LpError> {
        if coeffs.len() != self.n_struct {
            return Err(LpError::DimensionMismatch {
                what: "constraint row",
                expected: self.n_struct,
                got: coeffs.len(),
            });
        }
        if coeffs.iter().any(|a| !a.is_finite()) || !rhs.is_finite() {
            return Err(LpError::NonFinite { what: "constraint row" });
        }
        let i = self.m;
        let scaled: Vec<f64> = coeffs
            .iter()
            .zip(&self.col_scale)
            .map(|(a, s)| a * s)
            .collect();
        let rs = if self.opts.scaling {
            pow2_scale(scaled.iter().fold(0.0, |a, v| f64::max(a, v.abs())))
        } else {
            1.0
        };
        let mut activity = 0.0;
        for (j, &a) in scaled.iter().enumerate() {
            if a != 0.0 {
                self.cols[j].push((i, a * rs));
                activity += a * rs * self.value[j];
            }
        }

        // grow binv to (m+1)x(m+1)
        let m = self.m;
        let mut binv = vec![0.0; (m + 1) * (m + 1)];
        for r in 0..m {
            binv[r * (m + 1)..r * (m + 1) + m].copy_from_slice(&self.binv[r * m..r * m + m]);
        }
        self.binv = binv;
        self.m = m + 1;
        self.basis.push(usize::MAX);
        self.rhs.push(rhs * rs);
        self.row_scale.push(rs);

        let residual = rhs * rs - activity;
        self.push_row_basic(i, residual, f64::INFINITY);

        // Last row of the inverse: -(a_B^T Binv_old) / sigma.
        let sigma = self.binv[i * self.m + i];
        let mp = self.m;
        let mut last = vec![0.0; m];
        for p in 0..m {
            let var = self.basis[p];
            if var < self.n_struct {
                let a = scaled[var] * rs;
                if a != 0.0 {
                    let row = &self.binv[p * mp..p * mp + m];
                    for (l, b) in last.iter_mut().zip(row) {
                        *l += a * b;
                    }
                }
            }
        }
        for (k, l) in last.into_iter().enumerate() {
            self.binv[i * mp + k] = -l * sigma;
        }
        Ok(())
    }

    fn col_dot(&self, j: usize, y: &[f64]) -> f64 {
        match self.kinds[j] {
            VarKind::Structural => self.cols[j].iter().map(|&(i, a)| a * y[i]).sum(),
            VarKind::Slack(i) => y[i],
            VarKind::Artificial(i, s) => s * y[i],
        }
    }

    fn for_col(&self, j: usize, mut f: impl FnMut(usize, f64)) {
        match self.kinds[j] {
            VarKind::Structural => self.cols[j].iter().for_each(|&(i, a)| f(i, a)),
            VarKind::Slack(i) => f(i, 1.0),
            VarKind::Artificial(i, s) => f(i, s),
        }
    }

    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        let mut alpha = vec![0.0; m];
        self.for_col(j, |k, a| {
            for (p, al) in alpha.iter_mut().enumerate() {
                *al += self.binv[p * m + k] * a;
            }
        });
        alpha
    }

    fn btran(&self, cost: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut pi = vec![0.0; m];
        for p in 0..m {
            let c = cost[self.basis[p]];
            if c != 0.0 {
                let row = &self.binv[p * m..(p + 1) * m];
                for (y, b) in pi.iter_mut().zip(row) {
                    *y += c * b;
                }
            }
        }
        pi
    }

    /// Solves from the current state. Infeasible/unbounded outcomes are
    /// reported through [`LpResult::status`].
    pub fn solve(&mut self) -> Result<LpResult, LpError> {
        let cap = self
            .opts
            .max_iterations
            .unwrap_or(50 * (self.m + self.n_struct).max(1));
        let mut iterations = 0usize;
        if self.needs_phase1 {
            let phase1: Vec<f64> = self
                .kinds
                .iter()
                .enumerate()
                .map(|(j, k)| match k {
                    VarKind::Artificial(..) if self.upper[j] > 0.0 => 1.0,
                    _ => 0.0,
                })
                .collect();
            self.run_phase(&phase1, &mut iterations, cap)?;
            self.refine();
            let infeasibility: f64 = (0..self.kinds.len())
                .filter(|&j| phase1[j] > 0.0)
                .map(|j| self.value[j].max(0.0))
                .sum();
            let scale = 1.0 + self.rhs.iter().fold(0.0, |a, b| f64::max(a, b.abs()));
            if infeasibility > self.opts.feas_tol * scale {
                return Ok(LpResult {
                    status: LpStatus::Infeasible,
                    objective: f64::NAN,
                    x: Vec::new(),
                    iterations,
                });
            }
            for j in 0..self.kinds.len() {
                if matches!(self.kinds[j], VarKind::Artificial(..)) {
                    self.upper[j] = 0.0;
                    if self.status[j] != Status::Basic {
                        self.status[j] = Status::AtLower;
                        self.value[j] = 0.0;
                    }
                }
            }
            self.needs_phase1 = false;
        }
        let cost = self.cost.clone();
        let end = self.run_phase(&cost, &mut iterations, cap)?;
        self.refine();
        match end {
            PhaseEnd::Unbounded => Ok(LpResult {
                status: LpStatus::Unbounded,
                objective: match self.sense {
                    Sense::Minimize => f64::NEG_INFINITY,
                    Sense::Maximize => f64::INFINITY,
                },
                x: Vec::new(),
                iterations,
            }),
            PhaseEnd::Optimal => {
                let x = self.primal();
                let objective = x.iter().zip(&self.objective).map(|(a, c)| a * c).sum();
                Ok(LpResult {
                    status: LpStatus::Optimal,
                    objective,
                    x,
                    iterations,
                })
            }
        }
    }

    fn primal(&self) -> Vec<f64> {
        (0..self.n_struct)
            .map(|j| {
                let s = self.col_scale[j];
                let v = self.value[j] * s;
                let (l, u) = (self.lower[j] * s, self.upper[j] * s);
                let snap = 1e-11 * (1.0 + v.abs());
                if l.is_finite() && (v - l).abs() <= snap {
                    l
                } else if u.is_finite() && (v - u).abs() <= snap {
                    u
                } else {
                    v
                }
            })
            .collect()
    }

    fn run_phase(
        &mut self,
        cost: &[f64],
        iterations: &mut usize,
        cap: usize,
    ) -> Result<PhaseEnd, LpError> {
        let mut degenerate_run = 0usize;
        let nvars = self.kinds.len();
        loop {
            if *iterations >= cap {
                return Err(LpError::Stalled { iterations: *iterations });
            }
            let bland = degenerate_run >= self.opts.bland_after;
            let pi = self.btran(cost);

            let mut entering: Option<(usize, f64)> = None;
            let mut best = 0.0;
            for j in 0..nvars {
                let st = self.status[j];
                if st == Status::Basic || self.lower[j] == self.upper[j] {
                    continue;
                }
                let d = cost[j] - self.col_dot(j, &pi);
                let dir = match st {
                    Status::AtLower if d < -self.opts.opt_tol => 1.0,
                    Status::AtUpper if d > self.opts.opt_tol => -1.0,
                    Status::Free if d.abs() > self.opts.opt_tol => -d.signum(),
                    _ => continue,
                };
                if bland {
                    entering = Some((j, dir));
                    break;
                }
                if d.abs() > best {
                    best = d.abs();
                    entering = Some((j, dir));
                }
            }
            let Some((q, dir)) = entering else {
                return Ok(PhaseEnd::Optimal);
            };

            let alpha = self.ftran(q);
            let flip = self.upper[q] - self.lower[q];
            let mut step = f64::INFINITY;
            let mut leave: Option<(usize, bool)> = None; // (pos, leaves at lower)
            for (p, &a) in alpha.iter().enumerate() {
                if a.abs() <= self.opts.pivot_tol {
                    continue;
                }
                let b = self.basis[p];
                let rate = dir * a;
                let (t, at_lower) = if rate > 0.0 {
                    if !self.lower[b].is_finite() {
                        continue;
                    }
                    ((self.value[b] - self.lower[b]) / rate, true)
                } else {
                    if !self.upper[b].is_finite() {
                        continue;
                    }
                    ((self.upper[b] - self.value[b]) / -rate, false)
                };
                let t = t.max(0.0);
                let better = match leave {
                    None => true,
                    Some((lp, _)) => {
                        if t < step - 1e-12 {
                            true
                        } else if t <= step + 1e-12 {
                            if bland {
                                b < self.basis[lp]
                            } else {
                                a.abs() > alpha[lp].abs()
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    step = step.min(t);
                    leave = Some((p, at_lower));
                }
            }

            if leave.is_none() && !flip.is_finite() {
                return Ok(PhaseEnd::Unbounded);
            }
            *iterations += 1;

            if flip.is_finite() && (leave.is_none() || flip <= step) {
                // bound flip, basis unchanged
                let t = flip;
                self.value[q] += dir * t;
                for (p, &a) in alpha.iter().enumerate() {
                    if a != 0.0 {
                        self.value[self.basis[p]] -= dir * t * a;
                    }
                }
                self.status[q] = if dir > 0.0 { Status::AtUpper } else { Status::AtLower };
                self.value[q] = if dir > 0.0 { self.upper[q] } else { self.lower[q] };
                degenerate_run = if t <= 1e-12 { degenerate_run + 1 } else { 0 };
                continue;
            }

            let (r, at_lower) = leave.expect("checked above");
            let t = step;
            self.value[q] += dir * t;
            for (p, &a) in alpha.iter().enumerate() {
                if a != 0.0 {
                    self.value[self.basis[p]] -= dir * t * a;
                }
            }
            let out = self.basis[r];
            self.status[out] = if at_lower { Status::AtLower } else { Status::AtUpper };
            self.value[out] = if at_lower { self.lower[out] } else { self.upper[out] };
            self.status[q] = Status::Basic;
            self.basis[r] = q;
            self.pivot_update(r, &alpha);
            degenerate_run = if t <= 1e-12 { degenerate_run + 1 } else { 0 };

            self.pivots_since_refactor += 1;
            if self.pivots_since_refactor >= self.opts.refactor_every {
                self.refactor()?;
            }
        }
    }

    fn pivot_update(&mut self, r: usize, alpha: &[f64]) {
        let m = self.m;
        let piv = alpha[r];
        let (before, rest) = self.binv.split_at_mut(r * m);
        let (row_r, after) = rest.split_at_mut(m);
        for v in row_r.iter_mut() {
            *v /= piv;
        }
        let apply = |chunk: &mut [f64], a: f64| {
            for (x, y) in chunk.iter_mut().zip(row_r.iter()) {
                *x -= a * y;
            }
        };
        for (p, chunk) in before.chunks_mut(m).enumerate() {
            let a = alpha[p];
            if a != 0.0 {
                apply(chunk, a);
            }
        }
        for (k, chunk) in after.chunks_mut(m).enumerate() {
            let a = alpha[r + 1 + k];
            if a != 0.0 {
                apply(chunk, a);
            }
        }
    }

    /// Rebuilds the inverse from the basis columns and recomputes basic values.
    fn refactor(&mut self) -> Result<(), LpError> {
        let m = self.m;
        let mut b = vec![0.0; m * m];
        for p in 0..m {
            let var = self.basis[p];
            self.for_col(var, |i, a| b[i * m + p] = a);
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for c in 0..m {
            let (piv_row, piv_abs) = (c..m)
                .map(|r| (r, b[r * m + c].abs()))
                .fold((c, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if piv_abs < 1e-14 {
                return Err(LpError::Singular);
            }
            if piv_row != c {
                for k in 0..m {
                    b.swap(c * m + k, piv_row * m + k);
                    inv.swap(c * m + k, piv_row * m + k);
                }
            }
            let piv = b[c * m + c];
            for k in 0..m {
                b[c * m + k] /= piv;
                inv[c * m + k] /= piv;
            }
            for r in 0..m {
                if r == c {
                    continue;
                }
                let f = b[r * m + c];
                if f != 0.0 {
                    for k in 0..m {
                        b[r * m + k] -= f * b[c * m + k];
                        inv[r * m + k] -= f * inv[c * m + k];
                    }
                }
            }
        }
        // inv now maps row-space to basis positions
        self.binv = inv;
        self.pivots_since_refactor = 0;
        let mut res = self.rhs.clone();
        for j in 0..self.kinds.len() {
            if self.status[j] != Status::Basic && self.value[j] != 0.0 {
                let v = self.value[j];
                self.for_col(j, |i, a| res[i] -= a * v);
            }
        }
        for p in 0..m {
            let row = &self.binv[p * m..(p + 1) * m];
            self.value[self.basis[p]] = row.iter().zip(&res).map(|(a, b)| a * b).sum();
        }
        Ok(())
    }

    /// One step of iterative refinement on the basic values.
    fn refine(&mut self) {
        let m = self.m;
        let mut res = self.rhs.clone();
        for j in 0..self.kinds.len() {
            let v = self.value[j];
            if v != 0.0 {
                self.for_col(j, |i, a| res[i] -= a * v);
            }
        }
        for p in 0..m {
            let row = &self.binv[p * m..(p + 1) * m];
            let corr: f64 = row.iter().zip(&res).map(|(a, b)| a * b).sum();
            self.value[self.basis[p]] += corr;
        }
    }

    /// Row-space scaling applied to row `i` (for diagnostics).
    pub fn row_scale(&self, i: usize) -> f64 {
        self.row_scale[i]
    }
}
