//! Two-phase primal simplex with bounded variables.
//!
//! Variables are normalized to `x in [0, U]` (U possibly infinite): finite
//! lower bounds are shifted out, upper-bounded-only variables are reflected,
//! and fully free variables are split into a positive and a negative part.
//! Nonbasic variables sit at either bound; the ratio test handles the bound
//! flip, the basic-to-lower, and the basic-to-upper exits. Entering and
//! leaving choices follow Bland's rule, so the method cannot cycle.

use super::{
    ConstraintOp, MipProblem, Solution, SolveStatus, FEASIBILITY_TOL, OPTIMALITY_TOL,
};

const PIVOT_TOL: f64 = 1e-9;
/// Steps below this length count as degenerate for stall detection.
const DEGENERATE_STEP: f64 = 1e-12;

struct Tableau {
    /// Dense rows of the equality system, kept pivoted (B^{-1} A).
    a: Vec<Vec<f64>>,
    /// Current basic-variable values (B^{-1} b adjusted for at-upper vars).
    xb: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    at_upper: Vec<bool>,
    /// Upper bound of each internal column (lower is always zero).
    range: Vec<f64>,
}

enum PhaseOutcome {
    Optimal,
    Unbounded,
    IterationCap,
}

impl Tableau {
    fn num_cols(&self) -> usize {
        self.range.len()
    }

    /// Implied solution in internal coordinates (debug checks).
    #[allow(dead_code)]
    fn implied(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.num_cols()];
        for (j, v) in x.iter_mut().enumerate() {
            if !self.is_basic[j] && self.at_upper[j] {
                *v = self.range[j];
            }
        }
        for (i, &b) in self.basis.iter().enumerate() {
            x[b] = self.xb[i];
        }
        x
    }

    fn run(&mut self, costs: &[f64], max_iters: usize) -> PhaseOutcome {
        let debug_system: Option<(Vec<Vec<f64>>, Vec<f64>)> =
            if std::env::var("MOBIPROD_SIMPLEX_DEBUG").is_ok() {
                let x0 = self.implied();
                let rhs: Vec<f64> = self
                    .a
                    .iter()
                    .map(|row| row.iter().zip(&x0).map(|(a, v)| a * v).sum())
                    .collect();
                Some((self.a.clone(), rhs))
            } else {
                None
            };
        let residual = |tab: &Tableau, sys: &(Vec<Vec<f64>>, Vec<f64>)| -> f64 {
            let x = tab.implied();
            let mut worst = 0.0f64;
            for (row, &b) in sys.0.iter().zip(&sys.1) {
                let lhs: f64 = row.iter().zip(&x).map(|(a, v)| a * v).sum();
                worst = worst.max((lhs - b).abs());
            }
            worst
        };
        let m = self.a.len();
        let n = self.num_cols();
        let mut degenerate_streak = 0usize;
        for iter in 0..max_iters {
            // Reduced costs against the current basis.
            let cb: Vec<f64> = self.basis.iter().map(|&j| costs[j]).collect();
            let mut entering = None;
            for j in 0..n {
                if self.is_basic[j] || self.range[j] <= 0.0 {
                    continue;
                }
                let mut rc = costs[j];
                for i in 0..m {
                    if cb[i] != 0.0 {
                        rc -= cb[i] * self.a[i][j];
                    }
                }
                let favorable = if self.at_upper[j] {
                    rc > OPTIMALITY_TOL
                } else {
                    rc < -OPTIMALITY_TOL
                };
                if favorable {
                    entering = Some(j);
                    break; // Bland: smallest favorable index.
                }
            }
            let Some(j) = entering else {
                return PhaseOutcome::Optimal;
            };

            let sigma = if self.at_upper[j] { -1.0 } else { 1.0 };
            // Ratio test, pass one: the tightest step over the entering
            // variable's own range and every basic variable's bounds.
            let mut t_best = self.range[j];
            let mut ratios: Vec<(usize, f64, f64, bool)> = Vec::new();
            for i in 0..m {
                let d = sigma * self.a[i][j];
                let (t, hits_upper) = if d > PIVOT_TOL {
                    ((self.xb[i] / d).max(0.0), false)
                } else if d < -PIVOT_TOL {
                    let ub = self.range[self.basis[i]];
                    if !ub.is_finite() {
                        continue;
                    }
                    (((ub - self.xb[i]) / (-d)).max(0.0), true)
                } else {
                    continue;
                };
                ratios.push((i, t, d.abs(), hits_upper));
                if t < t_best {
                    t_best = t;
                }
            }

            if !t_best.is_finite() {
                return PhaseOutcome::Unbounded;
            }

            // Pass two: choose the leaving row among those whose bound
            // violation at step `t_best` stays within tolerance (the slack
            // tolerated is scaled per row by the pivot magnitude, so the
            // step never overshoots any bound materially). Prefer the
            // largest pivot magnitude for stability; during long degenerate
            // stalls prefer the smallest variable index instead, which is
            // Bland's anti-cycling rule.
            let bland_mode = degenerate_streak > m + n;
            let mut leaving: Option<(usize, bool, f64)> = None;
            for &(i, t, dabs, up) in &ratios {
                if (t - t_best) * dabs <= FEASIBILITY_TOL {
                    let better = match leaving {
                        None => true,
                        Some((li, _, ld)) => {
                            if bland_mode {
                                self.basis[i] < self.basis[li]
                            } else {
                                dabs > ld
                            }
                        }
                    };
                    if better {
                        leaving = Some((i, up, dabs));
                    }
                }
            }
            let leaving = leaving.map(|(i, up, _)| (i, up));
            if t_best > DEGENERATE_STEP {
                degenerate_streak = 0;
            } else {
                degenerate_streak += 1;
            }


            match leaving {
                None => {
                    // Bound flip: the entering variable crosses to its other
                    // bound without a basis change.
                    for i in 0..m {
                        self.xb[i] -= sigma * self.a[i][j] * t_best;
                    }
                    self.at_upper[j] = !self.at_upper[j];
                }
                Some((r, hits_upper)) => {
                    for i in 0..m {
                        self.xb[i] -= sigma * self.a[i][j] * t_best;
                    }
                    let enter_val = if self.at_upper[j] {
                        self.range[j] - t_best
                    } else {
                        t_best
                    };
                    let old = self.basis[r];
                    self.is_basic[old] = false;
                    self.at_upper[old] = hits_upper;
                    self.xb[r] = enter_val;
                    // Row reduction on the pivot column.
                    let p = self.a[r][j];
                    for v in self.a[r].iter_mut() {
                        *v /= p;
                    }
                    for i in 0..m {
                        if i == r {
                            continue;
                        }
                        let f = self.a[i][j];
                        if f == 0.0 {
                            continue;
                        }
                        let (head, tail) = self.a.split_at_mut(r.max(i));
                        let (row_i, row_r) = if i < r {
                            (&mut head[i], &tail[0])
                        } else {
                            (&mut tail[0], &head[r])
                        };
                        for (vi, vr) in row_i.iter_mut().zip(row_r.iter()) {
                            *vi -= f * vr;
                        }
                    }
                    self.basis[r] = j;
                    self.is_basic[j] = true;
                    self.at_upper[j] = false;
                }
            }
            if let Some(sys) = &debug_system {
                for (i, &v) in self.xb.iter().enumerate() {
                    let ub = self.range[self.basis[i]];
                    if v < -1e-6 || v > ub + 1e-6 {
                        panic!(
                            "simplex debug: basic value out of bounds at iteration {iter}: \
                             row {i}, var {b}, value {v}, ub {ub}",
                            b = self.basis[i]
                        );
                    }
                }
                let resid = residual(self, sys);
                if resid > 1e-6 {
                    eprintln!(
                        "simplex invariant broken at iteration {iter}: entering {j}, residual {resid:e}"
                    );
                    let xs = self.implied();
                    for (jj, &v) in xs.iter().enumerate() {
                        if v < -1e-9 || v > self.range[jj] + 1e-9 {
                            eprintln!(
                                "  var {jj} value {v} outside [0, {}], basic={}, at_upper={}",
                                self.range[jj], self.is_basic[jj], self.at_upper[jj]
                            );
                        }
                    }
                    panic!("simplex debug: invariant broken");
                }
            }
        }
        PhaseOutcome::IterationCap
    }
}

/// Optimal basic solution of the linear relaxation of `problem`
/// (integrality marks ignored).
pub fn solve_lp(problem: &MipProblem) -> Solution {
    if problem.validate().is_err() {
        return Solution::infeasible();
    }
    let n_orig = problem.num_vars();

    // Normalize variables to [0, U]: per original variable an offset and a
    // list of (internal column, multiplier).
    let mut offsets = vec![0.0; n_orig];
    let mut col_of: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_orig];
    let mut range: Vec<f64> = Vec::new();
    let mut internal_cost: Vec<f64> = Vec::new();
    for j in 0..n_orig {
        let (lo, hi) = (problem.lower[j], problem.upper[j]);
        if lo.is_finite() {
            offsets[j] = lo;
            col_of[j].push((range.len(), 1.0));
            range.push(hi - lo);
            internal_cost.push(problem.objective[j]);
        } else if hi.is_finite() {
            offsets[j] = hi;
            col_of[j].push((range.len(), -1.0));
            range.push(f64::INFINITY);
            internal_cost.push(-problem.objective[j]);
        } else {
            // Free: positive and negative parts.
            col_of[j].push((range.len(), 1.0));
            range.push(f64::INFINITY);
            internal_cost.push(problem.objective[j]);
            col_of[j].push((range.len(), -1.0));
            range.push(f64::INFINITY);
            internal_cost.push(-problem.objective[j]);
        }
    }
    let n_struct = range.len();

    // Rows in internal coordinates, as equalities with slacks.
    struct RowBuild {
        coeffs: Vec<f64>,
        rhs: f64,
        slack: Option<usize>,
    }
    let mut rows: Vec<RowBuild> = Vec::with_capacity(problem.constraints.len());
    let mut next_col = n_struct;
    for c in &problem.constraints {
        let mut dense = vec![0.0; n_struct];
        let mut rhs = c.rhs;
        for &(j, a) in &c.coeffs {
            rhs -= a * offsets[j];
            for &(col, mult) in &col_of[j] {
                dense[col] += a * mult;
            }
        }
        let mut sign = 1.0;
        if c.op == ConstraintOp::Ge {
            sign = -1.0;
        }
        if sign < 0.0 {
            for v in dense.iter_mut() {
                *v = -*v;
            }
            rhs = -rhs;
        }
        let slack = if c.op == ConstraintOp::Eq {
            None
        } else {
            let s = next_col;
            next_col += 1;
            Some(s)
        };
        rows.push(RowBuild {
            coeffs: dense,
            rhs,
            slack,
        });
    }
    let n_slack = next_col - n_struct;

    // Assemble the tableau; negate rows to make rhs nonnegative and add
    // artificials where no slack can serve as the starting basis.
    let m = rows.len();
    let mut artificials: Vec<usize> = Vec::new();
    let mut a: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut xb = vec![0.0; m];
    let mut basis = vec![0usize; m];
    // Columns: structural, slacks, artificials (artificial count <= m).
    let total_guess = n_struct + n_slack + m;
    for (i, row) in rows.iter().enumerate() {
        let mut dense = vec![0.0; total_guess];
        dense[..n_struct].copy_from_slice(&row.coeffs);
        let mut rhs = row.rhs;
        let mut slack_sign = 1.0;
        if rhs < 0.0 {
            for v in dense.iter_mut() {
                *v = -*v;
            }
            rhs = -rhs;
            slack_sign = -1.0;
        }
        if let Some(s) = row.slack {
            dense[s] = slack_sign;
        }
        match row.slack {
            Some(s) if slack_sign > 0.0 => {
                basis[i] = s;
            }
            _ => {
                let art = n_struct + n_slack + artificials.len();
                artificials.push(art);
                dense[art] = 1.0;
                basis[i] = art;
            }
        }
        xb[i] = rhs;
        a.push(dense);
    }
    let n_total = n_struct + n_slack + artificials.len();
    for row in a.iter_mut() {
        row.truncate(n_total);
    }
    let mut full_range = range;
    full_range.extend(std::iter::repeat_n(f64::INFINITY, n_slack));
    full_range.extend(std::iter::repeat_n(f64::INFINITY, artificials.len()));
    let mut is_basic = vec![false; n_total];
    for &b in &basis {
        is_basic[b] = true;
    }
    let mut tab = Tableau {
        a,
        xb,
        basis,
        is_basic,
        at_upper: vec![false; n_total],
        range: full_range,
    };

    let max_iters = 10_000.max(200 * (m + n_total));

    // Phase 1: drive artificial mass to zero.
    if !artificials.is_empty() {
        let mut phase1 = vec![0.0; n_total];
        for &j in &artificials {
            phase1[j] = 1.0;
        }
        match tab.run(&phase1, max_iters) {
            PhaseOutcome::Optimal => {}
            PhaseOutcome::Unbounded => unreachable!("phase 1 objective is bounded below"),
            PhaseOutcome::IterationCap => {
                return Solution {
                    status: SolveStatus::BudgetExceeded,
                    values: Vec::new(),
                    objective: f64::INFINITY,
                    nodes: 0,
                };
            }
        }
        let infeasibility: f64 = tab
            .basis
            .iter()
            .zip(&tab.xb)
            .filter(|(j, _)| phase1[**j] > 0.0)
            .map(|(_, v)| v.max(0.0))
            .sum();
        let b_scale = tab.xb.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        if infeasibility > FEASIBILITY_TOL * b_scale.max(1e3) {
            return Solution::infeasible();
        }
        // Lock artificials out of phase 2.
        for &j in &artificials {
            tab.range[j] = 0.0;
        }
    }

    let mut phase2 = vec![0.0; n_total];
    phase2[..internal_cost.len()].copy_from_slice(&internal_cost);
    let outcome = tab.run(&phase2, max_iters);
    match outcome {
        PhaseOutcome::Unbounded => {
            return Solution {
                status: SolveStatus::Unbounded,
                values: Vec::new(),
                objective: f64::NEG_INFINITY,
                nodes: 0,
            };
        }
        PhaseOutcome::IterationCap => {
            return Solution {
                status: SolveStatus::BudgetExceeded,
                values: Vec::new(),
                objective: f64::INFINITY,
                nodes: 0,
            };
        }
        PhaseOutcome::Optimal => {}
    }

    // Map internal column values back to the original variables.
    let mut internal = vec![0.0; n_total];
    for j in 0..n_total {
        if !tab.is_basic[j] && tab.at_upper[j] {
            internal[j] = tab.range[j];
        }
    }
    for (i, &b) in tab.basis.iter().enumerate() {
        internal[b] = tab.xb[i];
    }
    let mut x = vec![0.0; n_orig];
    for j in 0..n_orig {
        let mut v = offsets[j];
        for &(col, mult) in &col_of[j] {
            v += mult * internal[col];
        }
        x[j] = v.clamp(problem.lower[j], problem.upper[j]);
    }

    // Final self-check: a severely ill-conditioned program can erode the
    // accumulated tableau until the claimed optimum stops satisfying the
    // rows. Surface that as a failed solve rather than returning garbage.
    let mut scale = 1.0f64;
    let mut worst = 0.0f64;
    for c in &problem.constraints {
        let lhs = c.eval(&x);
        scale = scale.max(c.rhs.abs());
        let viol = match c.op {
            ConstraintOp::Le => lhs - c.rhs,
            ConstraintOp::Ge => c.rhs - lhs,
            ConstraintOp::Eq => (lhs - c.rhs).abs(),
        };
        worst = worst.max(viol);
    }
    if worst > 1e-6 * scale.max(1.0) {
        return Solution {
            status: SolveStatus::BudgetExceeded,
            values: Vec::new(),
            objective: f64::INFINITY,
            nodes: 0,
        };
    }

    let objective = problem.eval_objective(&x);
    Solution {
        status: SolveStatus::Optimal,
        values: x,
        objective,
        nodes: 0,
    }
}
