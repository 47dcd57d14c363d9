//! Best-first branch and bound over the LP relaxation.

use super::{solve_lp, MipProblem, Solution, SolveStatus, INTEGRALITY_TOL};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

pub const DEFAULT_NODE_BUDGET: u64 = 200_000;

struct Node {
    bound: f64,
    id: u64,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.id == other.id
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; reverse for lowest-bound-first, with the
        // insertion id breaking ties deterministically.
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}

fn most_fractional(problem: &MipProblem, x: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, &v) in x.iter().enumerate() {
        if !problem.integer[j] {
            continue;
        }
        let frac = (v - v.round()).abs();
        if frac <= INTEGRALITY_TOL {
            continue;
        }
        // Distance from one half: smaller means more fractional.
        let score = (v - v.floor() - 0.5).abs();
        match best {
            Some((_, s)) if s <= score => {}
            _ => best = Some((j, score)),
        }
    }
    best.map(|(j, _)| j)
}

/// Provably optimal integer solution via best-first branch and bound,
/// branching on the most fractional variable (ties to the lowest index).
pub fn solve_mip(problem: &MipProblem) -> Solution {
    solve_mip_with_budget(problem, DEFAULT_NODE_BUDGET)
}

pub fn solve_mip_with_budget(problem: &MipProblem, node_budget: u64) -> Solution {
    if problem.validate().is_err() {
        return Solution::infeasible();
    }
    let mut heap = BinaryHeap::new();
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        id: 0,
        lower: problem.lower.clone(),
        upper: problem.upper.clone(),
    });
    let mut next_id = 1u64;
    let mut nodes = 0u64;
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut saw_unbounded = false;
    let mut budget_hit = false;

    while let Some(node) = heap.pop() {
        if let Some((best, _)) = &incumbent {
            if node.bound >= best - 1e-9 {
                continue; // Bound can no longer improve on the incumbent.
            }
        }
        if nodes >= node_budget {
            budget_hit = true;
            break;
        }
        nodes += 1;
        let mut relaxed = problem.clone();
        relaxed.lower = node.lower.clone();
        relaxed.upper = node.upper.clone();
        let lp = solve_lp(&relaxed);
        match lp.status {
            SolveStatus::Infeasible => continue,
            SolveStatus::Unbounded => {
                saw_unbounded = true;
                continue;
            }
            SolveStatus::BudgetExceeded => {
                budget_hit = true;
                continue;
            }
            SolveStatus::Optimal => {}
        }
        if let Some((best, _)) = &incumbent {
            if lp.objective >= best - 1e-9 {
                continue;
            }
        }
        match most_fractional(problem, &lp.values) {
            None => {
                // Integer feasible: round the marked variables and keep the
                // better incumbent.
                let mut x = lp.values.clone();
                for (j, v) in x.iter_mut().enumerate() {
                    if problem.integer[j] {
                        *v = v.round();
                    }
                }
                let obj = problem.eval_objective(&x);
                let better = incumbent
                    .as_ref()
                    .map(|(best, _)| obj < best - 1e-9)
                    .unwrap_or(true);
                if better {
                    incumbent = Some((obj, x));
                }
            }
            Some(j) => {
                let v = lp.values[j];
                let mut left = Node {
                    bound: lp.objective,
                    id: next_id,
                    lower: node.lower.clone(),
                    upper: node.upper.clone(),
                };
                next_id += 1;
                left.upper[j] = v.floor();
                if left.lower[j] <= left.upper[j] {
                    heap.push(left);
                }
                let mut right = Node {
                    bound: lp.objective,
                    id: next_id,
                    lower: node.lower,
                    upper: node.upper,
                };
                next_id += 1;
                right.lower[j] = v.ceil();
                if right.lower[j] <= right.upper[j] {
                    heap.push(right);
                }
            }
        }
    }

    match incumbent {
        Some((obj, x)) => Solution {
            status: if budget_hit {
                SolveStatus::BudgetExceeded
            } else {
                SolveStatus::Optimal
            },
            values: x,
            objective: obj,
            nodes,
        },
        None => Solution {
            status: if budget_hit {
                SolveStatus::BudgetExceeded
            } else if saw_unbounded {
                SolveStatus::Unbounded
            } else {
                SolveStatus::Infeasible
            },
            values: Vec::new(),
            objective: f64::INFINITY,
            nodes,
        },
    }
}
