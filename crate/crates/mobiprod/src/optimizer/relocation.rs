//! Exact dynamic program for the select-one-option-per-location programs.
//!
//! Every relocation program has the same shape: each location picks exactly
//! one option `(delta_s, delta_m, cost)` subject to two coupling sums,
//! `sum delta_m = 0` and `sum delta_s = 0`. A DP over locations with state
//! (accumulated module flow, accumulated inventory flow) solves it exactly in
//! time polynomial in the option ranges, unlike branch and bound.

use super::{LinearConstraint, MipProblem, OptimizerError, Solution};
use std::collections::BTreeMap;

/// One selectable option for a location, with its fully assembled cost
/// (movement plus whatever inner minimization the policy performed).
/// `payload` is an opaque tag the caller can use to recover the inner choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocationOption {
    pub delta_s: i64,
    pub delta_m: i64,
    pub cost: f64,
    pub payload: usize,
}

/// Option lists per location, in the caller's canonical order; cost ties are
/// broken toward the earlier option.
#[derive(Debug, Clone, Default)]
pub struct OptionTable {
    pub locations: Vec<Vec<LocationOption>>,
}

impl OptionTable {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        if self.locations.is_empty() {
            return Err(OptimizerError::Malformed("no locations".into()));
        }
        for (l, opts) in self.locations.iter().enumerate() {
            if opts.is_empty() {
                return Err(OptimizerError::Malformed(format!(
                    "location {l} has no options"
                )));
            }
            if opts.iter().any(|o| !o.cost.is_finite()) {
                return Err(OptimizerError::Malformed(format!(
                    "location {l} has a non-finite option cost"
                )));
            }
        }
        Ok(())
    }
}

/// Minimum-cost selection of one option per location with both coupling sums
/// equal to zero. Returns the chosen option index per location.
pub fn solve_relocation_dp(table: &OptionTable) -> Result<Vec<usize>, OptimizerError> {
    table.validate()?;
    let n = table.locations.len();

    // suffix[l] maps (remaining delta_m, remaining delta_s) that locations
    // l..n can absorb to the minimal cost of doing so.
    let mut suffix: Vec<BTreeMap<(i64, i64), f64>> = vec![BTreeMap::new(); n + 1];
    suffix[n].insert((0, 0), 0.0);
    for l in (0..n).rev() {
        let mut layer = BTreeMap::new();
        for opt in &table.locations[l] {
            for (&(dm, ds), &cost) in &suffix[l + 1] {
                let key = (dm + opt.delta_m, ds + opt.delta_s);
                let total = opt.cost + cost;
                layer
                    .entry(key)
                    .and_modify(|best: &mut f64| {
                        if total < *best {
                            *best = total;
                        }
                    })
                    .or_insert(total);
            }
        }
        suffix[l] = layer;
    }

    let Some(&best_total) = suffix[0].get(&(0, 0)) else {
        return Err(OptimizerError::InfeasibleProblem);
    };

    // Walk forward choosing, at each location, the first option (in the
    // caller's order) consistent with the optimal suffix cost. The suffix
    // entries were built from exactly the sums compared here, so the
    // comparison is exact; the epsilon only guards pathological roundoff.
    let mut picks = Vec::with_capacity(n);
    let mut need = (0i64, 0i64);
    let mut remaining = best_total;
    for l in 0..n {
        let mut chosen = None;
        let mut fallback: Option<(usize, f64)> = None;
        for (i, opt) in table.locations[l].iter().enumerate() {
            let key = (need.0 - opt.delta_m, need.1 - opt.delta_s);
            if let Some(&tail) = suffix[l + 1].get(&key) {
                let total = opt.cost + tail;
                if total == remaining {
                    chosen = Some((i, tail));
                    break;
                }
                let closer = fallback
                    .map(|(_, gap)| (total - remaining).abs() < gap)
                    .unwrap_or(true);
                if closer {
                    fallback = Some((i, (total - remaining).abs()));
                }
            }
        }
        let (i, tail) = match chosen {
            Some((i, tail)) => (i, tail),
            None => {
                let (i, gap) = fallback.ok_or(OptimizerError::InfeasibleProblem)?;
                debug_assert!(gap <= 1e-9, "suffix reconstruction drifted by {gap}");
                let opt = &table.locations[l][i];
                let key = (need.0 - opt.delta_m, need.1 - opt.delta_s);
                (i, *suffix[l + 1].get(&key).unwrap())
            }
        };
        let opt = &table.locations[l][i];
        need = (need.0 - opt.delta_m, need.1 - opt.delta_s);
        remaining = tail;
        picks.push(i);
    }
    Ok(picks)
}

/// Total cost of a selection.
pub fn selection_cost(table: &OptionTable, picks: &[usize]) -> f64 {
    table
        .locations
        .iter()
        .zip(picks)
        .map(|(opts, &i)| opts[i].cost)
        .sum()
}

/// The same program as a 0/1 integer program (one binary per option, a
/// convexity row per location, two coupling rows), for cross-checking the DP
/// against branch and bound.
pub fn relocation_mip(table: &OptionTable) -> (MipProblem, Vec<Vec<usize>>) {
    let total: usize = table.locations.iter().map(|o| o.len()).sum();
    let mut p = MipProblem::new(total);
    p.upper = vec![1.0; total];
    p.integer = vec![true; total];
    let mut var_of = Vec::with_capacity(table.locations.len());
    let mut k = 0usize;
    let mut dm_row = Vec::new();
    let mut ds_row = Vec::new();
    for opts in &table.locations {
        let mut vars = Vec::with_capacity(opts.len());
        let mut convexity = Vec::with_capacity(opts.len());
        for opt in opts {
            p.objective[k] = opt.cost;
            convexity.push((k, 1.0));
            if opt.delta_m != 0 {
                dm_row.push((k, opt.delta_m as f64));
            }
            if opt.delta_s != 0 {
                ds_row.push((k, opt.delta_s as f64));
            }
            vars.push(k);
            k += 1;
        }
        p.constraints.push(LinearConstraint::eq(convexity, 1.0));
        var_of.push(vars);
    }
    p.constraints.push(LinearConstraint::eq(dm_row, 0.0));
    p.constraints.push(LinearConstraint::eq(ds_row, 0.0));
    (p, var_of)
}

/// Decode a MIP solution of [`relocation_mip`] back to option indices.
pub fn decode_relocation_solution(
    solution: &Solution,
    var_of: &[Vec<usize>],
) -> Option<Vec<usize>> {
    if !solution.is_optimal() {
        return None;
    }
    let mut picks = Vec::with_capacity(var_of.len());
    for vars in var_of {
        let mut chosen = None;
        for (i, &v) in vars.iter().enumerate() {
            if solution.values[v] > 0.5 {
                chosen = Some(i);
                break;
            }
        }
        picks.push(chosen?);
    }
    Some(picks)
}
