//! Exact solvers for the one-epoch decision programs.
//!
//! Three solution paths share the [`MipProblem`] matrix form: a two-phase
//! bounded-variable primal simplex ([`solve_lp`]), a best-first
//! branch-and-bound wrapper around it ([`solve_mip`]), and a dynamic program
//! over locations ([`solve_relocation_dp`]) that solves the
//! select-one-option-per-location programs with two coupling constraints
//! exactly and in polynomial time.

mod mip;
mod relocation;
mod simplex;

pub use mip::{solve_mip, solve_mip_with_budget, DEFAULT_NODE_BUDGET};
pub use relocation::{
    decode_relocation_solution, relocation_mip, selection_cost, solve_relocation_dp,
    LocationOption, OptionTable,
};
pub use simplex::solve_lp;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Feasibility tolerance of the simplex kernel.
pub const FEASIBILITY_TOL: f64 = 1e-9;
/// Reduced-cost (optimality) tolerance of the simplex kernel.
pub const OPTIMALITY_TOL: f64 = 1e-9;
/// Tolerance at which a relaxation value counts as integral.
pub const INTEGRALITY_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("no feasible selection")]
    InfeasibleProblem,
    #[error("malformed problem: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintOp {
    Le,
    Eq,
    Ge,
}

/// One linear constraint in sparse form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub coeffs: Vec<(usize, f64)>,
    pub op: ConstraintOp,
    pub rhs: f64,
}

impl LinearConstraint {
    pub fn le(coeffs: Vec<(usize, f64)>, rhs: f64) -> Self {
        LinearConstraint {
            coeffs,
            op: ConstraintOp::Le,
            rhs,
        }
    }

    pub fn eq(coeffs: Vec<(usize, f64)>, rhs: f64) -> Self {
        LinearConstraint {
            coeffs,
            op: ConstraintOp::Eq,
            rhs,
        }
    }

    pub fn ge(coeffs: Vec<(usize, f64)>, rhs: f64) -> Self {
        LinearConstraint {
            coeffs,
            op: ConstraintOp::Ge,
            rhs,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }
}

/// A linear program in bounded-variable form, with an integrality mark per
/// variable; `solve_lp` ignores the marks, `solve_mip` enforces them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MipProblem {
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub integer: Vec<bool>,
    pub constraints: Vec<LinearConstraint>,
}

impl MipProblem {
    /// Problem with `n` continuous variables bounded below by zero.
    pub fn new(n: usize) -> Self {
        MipProblem {
            objective: vec![0.0; n],
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
            integer: vec![false; n],
            constraints: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n || self.integer.len() != n {
            return Err(OptimizerError::Malformed("field length mismatch".into()));
        }
        for j in 0..n {
            if self.lower[j] > self.upper[j] {
                return Err(OptimizerError::Malformed(format!(
                    "variable {j} has empty bound interval"
                )));
            }
            if self.integer[j] && (!self.lower[j].is_finite() || !self.upper[j].is_finite()) {
                return Err(OptimizerError::Malformed(format!(
                    "integer variable {j} must have finite bounds"
                )));
            }
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if c.coeffs.iter().any(|&(j, _)| j >= n) {
                return Err(OptimizerError::Malformed(format!(
                    "constraint {i} references an unknown variable"
                )));
            }
            if !c.rhs.is_finite() {
                return Err(OptimizerError::Malformed(format!(
                    "constraint {i} has non-finite rhs"
                )));
            }
        }
        Ok(())
    }

    pub fn eval_objective(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Plain-text dump in LP format, for external cross-checks.
    pub fn dump_lp(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        s.push_str("Minimize\n obj:");
        for (j, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                let _ = write!(s, " {c:+} x{j}");
            }
        }
        s.push_str("\nSubject To\n");
        for (i, c) in self.constraints.iter().enumerate() {
            let _ = write!(s, " c{i}:");
            for &(j, a) in &c.coeffs {
                let _ = write!(s, " {a:+} x{j}");
            }
            let op = match c.op {
                ConstraintOp::Le => "<=",
                ConstraintOp::Eq => "=",
                ConstraintOp::Ge => ">=",
            };
            let _ = writeln!(s, " {op} {}", c.rhs);
        }
        s.push_str("Bounds\n");
        for j in 0..self.num_vars() {
            let _ = writeln!(s, " {} <= x{j} <= {}", self.lower[j], self.upper[j]);
        }
        let ints: Vec<String> = (0..self.num_vars())
            .filter(|&j| self.integer[j])
            .map(|j| format!("x{j}"))
            .collect();
        if !ints.is_empty() {
            s.push_str("General\n ");
            s.push_str(&ints.join(" "));
            s.push('\n');
        }
        s.push_str("End\n");
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// The node or iteration budget ran out; `values` carry the incumbent
    /// when one exists.
    BudgetExceeded,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub status: SolveStatus,
    pub values: Vec<f64>,
    pub objective: f64,
    pub nodes: u64,
}

impl Solution {
    pub fn infeasible() -> Self {
        Solution {
            status: SolveStatus::Infeasible,
            values: Vec::new(),
            objective: f64::INFINITY,
            nodes: 0,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}
