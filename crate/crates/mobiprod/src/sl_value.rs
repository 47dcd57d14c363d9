//! Single-location value tables under the static-belief approximation.
//!
//! For a fixed belief the single-location problem is an ordinary capacitated
//! base-stock DP over one inventory dimension; tables are built per
//! (belief-grid point, module count) by successive approximations. On top of
//! the tables this module provides the capacity blend, newsvendor base-stock
//! levels, piecewise-linear facet extraction for the lookahead policies, and
//! the static-belief approximation-gap bound.

use crate::instances::Instance;
use crate::modulation::BeliefGrid;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SlValueError {
    #[error("value iteration did not converge: residual {residual:e} after {iterations} iterations")]
    ConvergenceFailure { residual: f64, iterations: usize },
    #[error("table is not convex enough for facet extraction: {0}")]
    NonConvexTable(String),
    #[error("invalid blend coefficient {0} (must be in [0,1])")]
    InvalidBlend(f64),
    #[error("argument out of range: {0}")]
    OutOfRange(String),
}

/// Convex blend weight between the full-capacity and current-capacity tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlendSpec {
    theta: f64,
}

impl BlendSpec {
    pub fn new(theta: f64) -> Result<Self, SlValueError> {
        if !(0.0..=1.0).contains(&theta) || !theta.is_finite() {
            return Err(SlValueError::InvalidBlend(theta));
        }
        Ok(BlendSpec { theta })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
}

/// One-period holding/backorder cost `b (d-y)^+ + h (y-d)^+`.
pub fn one_period_cost(backorder: f64, holding: f64, y: i64, d: i64) -> f64 {
    if d >= y {
        backorder * (d - y) as f64
    } else {
        holding * (y - d) as f64
    }
}

/// Solver knobs for table construction.
#[derive(Debug, Clone, Copy)]
pub struct SlValueConfig {
    /// Sup-norm stopping tolerance; `None` selects `1e-6 (1-beta)/(2 beta)`.
    pub eps_stop: Option<f64>,
    pub max_iters: usize,
    /// When set, run exactly this many iterations instead of iterating to
    /// convergence (finite-horizon tables for oracle comparisons).
    pub fixed_steps: Option<usize>,
}

impl Default for SlValueConfig {
    fn default() -> Self {
        SlValueConfig {
            eps_stop: None,
            max_iters: 5000,
            fixed_steps: None,
        }
    }
}

fn default_eps(beta: f64) -> f64 {
    if beta <= 0.0 {
        f64::INFINITY
    } else {
        1e-6 * (1.0 - beta) / (2.0 * beta)
    }
}

/// Convergence bookkeeping for one table.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    /// Largest iteration count over (grid point, module count) cells.
    pub iterations: usize,
    /// Largest final sup-norm residual over cells.
    pub residual: f64,
    /// Most negative pointwise step `v_{n+1} - v_n` seen anywhere; the
    /// iterates are provably nondecreasing, so this should stay above
    /// roundoff.
    pub min_iterate_delta: f64,
}

/// Cost-to-go of one location as a lookup table over
/// (belief-grid point, inventory, module count).
///
/// Inventory arguments outside the truncation window are extended affinely
/// with the boundary slope; the table is affine in deep backlog and high
/// stock, so the extension keeps convexity exact and the truncation error
/// small.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueTable {
    pub location: usize,
    pub grid: BeliefGrid,
    pub s_min: i64,
    pub s_max: i64,
    /// Module counts run over `0..=u_max`.
    pub u_max: usize,
    pub beta: f64,
    values: Vec<f64>,
    base_stock: Vec<i64>,
    bottom_slope: Vec<f64>,
    top_slope: Vec<f64>,
    pub diagnostics: IterationDiagnostics,
}

impl ValueTable {
    fn n_s(&self) -> usize {
        (self.s_max - self.s_min + 1) as usize
    }

    fn cell(&self, gp: usize, u: usize) -> usize {
        gp * (self.u_max + 1) + u
    }

    fn idx(&self, gp: usize, u: usize, si: usize) -> usize {
        self.cell(gp, u) * self.n_s() + si
    }

    /// Table value with affine extension outside the inventory window.
    pub fn value(&self, gp: usize, u: usize, s: i64) -> f64 {
        if s < self.s_min {
            let base = self.values[self.idx(gp, u, 0)];
            base + self.bottom_slope[self.cell(gp, u)] * (s - self.s_min) as f64
        } else if s > self.s_max {
            let base = self.values[self.idx(gp, u, self.n_s() - 1)];
            base + self.top_slope[self.cell(gp, u)] * (s - self.s_max) as f64
        } else {
            self.values[self.idx(gp, u, (s - self.s_min) as usize)]
        }
    }

    /// Smallest minimizer of the one-step lookahead at the fixed point (the
    /// base-stock level), clamped into the table window.
    pub fn base_stock(&self, gp: usize, u: usize) -> i64 {
        self.base_stock[self.cell(gp, u)]
    }

    pub fn structure_report(&self) -> StructureReport {
        let n_s = self.n_s();
        let mut report = StructureReport {
            min_second_difference_s: f64::INFINITY,
            max_capacity_increase: f64::NEG_INFINITY,
            min_second_difference_c: f64::INFINITY,
            max_base_stock_increase: i64::MIN,
            min_value: f64::INFINITY,
            min_iterate_delta: self.diagnostics.min_iterate_delta,
        };
        for gp in 0..self.grid.len() {
            for u in 0..=self.u_max {
                for si in 0..n_s {
                    let s = self.s_min + si as i64;
                    let v = self.value(gp, u, s);
                    report.min_value = report.min_value.min(v);
                    if si + 2 < n_s {
                        let d2 = self.value(gp, u, s + 2) - 2.0 * self.value(gp, u, s + 1) + v;
                        report.min_second_difference_s = report.min_second_difference_s.min(d2);
                    }
                    if u < self.u_max {
                        let inc = self.value(gp, u + 1, s) - v;
                        report.max_capacity_increase = report.max_capacity_increase.max(inc);
                    }
                    if u + 2 <= self.u_max {
                        let d2 = self.value(gp, u + 2, s) - 2.0 * self.value(gp, u + 1, s) + v;
                        report.min_second_difference_c = report.min_second_difference_c.min(d2);
                    }
                }
                if u < self.u_max {
                    let inc = self.base_stock(gp, u + 1) - self.base_stock(gp, u);
                    report.max_base_stock_increase = report.max_base_stock_increase.max(inc);
                }
            }
        }
        report
    }
}

/// Structural-property magnitudes of a table; see the acceptance suite for
/// the tolerances they are held to.
#[derive(Debug, Clone, Copy)]
pub struct StructureReport {
    /// Convexity in inventory: most negative second difference over s.
    pub min_second_difference_s: f64,
    /// Monotonicity in capacity: largest value increase from adding a module.
    pub max_capacity_increase: f64,
    /// Convexity in capacity: most negative second difference over u.
    pub min_second_difference_c: f64,
    /// Base-stock monotonicity: largest base-stock increase from adding a module.
    pub max_base_stock_increase: i64,
    pub min_value: f64,
    pub min_iterate_delta: f64,
}

impl StructureReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.min_second_difference_s >= -tol
            && self.max_capacity_increase <= tol
            && self.min_second_difference_c >= -tol
            && self.max_base_stock_increase <= 0
            && self.min_value >= -tol
            && self.min_iterate_delta >= -1e-9
    }
}

/// Fixed point of the static-belief single-location operator, per grid point
/// and module count, by successive approximations from zero.
pub fn static_value_iteration(
    instance: &Instance,
    l: usize,
    grid: &BeliefGrid,
    cfg: &SlValueConfig,
) -> Result<ValueTable, SlValueError> {
    let (s_min, s_max) = instance.s_range(l);
    let n_s = (s_max - s_min + 1) as usize;
    if n_s < 2 {
        return Err(SlValueError::OutOfRange("inventory window too small".into()));
    }
    let u_max = instance.module_cap[l];
    let beta = instance.discount;
    let eps = cfg.eps_stop.unwrap_or_else(|| default_eps(beta));
    let b = instance.backorder_cost[l];
    let h = instance.holding_cost[l];
    let outcomes = instance.model.demand[l].outcomes.clone();
    let c_top = instance.capacity(l, u_max).max(0);

    struct GpResult {
        values: Vec<f64>,
        base_stock: Vec<i64>,
        bottom_slope: Vec<f64>,
        top_slope: Vec<f64>,
        diag: IterationDiagnostics,
    }

    let per_gp: Vec<Result<GpResult, SlValueError>> = grid
        .points()
        .par_iter()
        .map(|x| {
            let w = instance.model.one_step_demand_pmf(l, x);
            let n_y_top = n_s + c_top as usize;
            // One-period expected cost over the full production reach.
            let mut l_one = vec![0.0; n_y_top];
            for (yi, entry) in l_one.iter_mut().enumerate() {
                let y = s_min + yi as i64;
                *entry = w
                    .iter()
                    .zip(&outcomes)
                    .map(|(&wn, &d)| wn * one_period_cost(b, h, y, d))
                    .sum();
            }

            let mut values = Vec::with_capacity((u_max + 1) * n_s);
            let mut base_stock = Vec::with_capacity(u_max + 1);
            let mut bottom_slope = Vec::with_capacity(u_max + 1);
            let mut top_slope = Vec::with_capacity(u_max + 1);
            let mut diag = IterationDiagnostics::default();

            for u in 0..=u_max {
                let cap = instance.capacity(l, u).max(0) as usize;
                let n_y = n_s + cap;
                let mut v = vec![0.0; n_s];
                let mut q = vec![0.0; n_y];
                let mut iterations = 0usize;
                let mut residual = 0.0f64;

                let eval = |v: &[f64], t: i64| -> f64 {
                    if t < s_min {
                        v[0] + (v[1] - v[0]) * (t - s_min) as f64
                    } else if t > s_max {
                        v[n_s - 1] + (v[n_s - 1] - v[n_s - 2]) * (t - s_max) as f64
                    } else {
                        v[(t - s_min) as usize]
                    }
                };

                let run_steps = cfg.fixed_steps;
                loop {
                    if run_steps == Some(iterations) {
                        break;
                    }
                    iterations += 1;
                    for (yi, qy) in q.iter_mut().enumerate() {
                        let y = s_min + yi as i64;
                        let future: f64 = w
                            .iter()
                            .zip(&outcomes)
                            .map(|(&wn, &d)| wn * eval(&v, y - d))
                            .sum();
                        *qy = l_one[yi] + beta * future;
                    }
                    let mut next = vec![0.0; n_s];
                    for (si, slot) in next.iter_mut().enumerate() {
                        let mut best = f64::INFINITY;
                        for qy in &q[si..=si + cap] {
                            if *qy < best {
                                best = *qy;
                            }
                        }
                        *slot = best;
                    }
                    residual = 0.0;
                    for (a, b) in next.iter().zip(&v) {
                        let delta = a - b;
                        residual = residual.max(delta.abs());
                        diag.min_iterate_delta = diag.min_iterate_delta.min(delta);
                    }
                    v = next;
                    if run_steps.is_none() {
                        if residual <= eps {
                            break;
                        }
                        if iterations >= cfg.max_iters {
                            return Err(SlValueError::ConvergenceFailure {
                                residual,
                                iterations,
                            });
                        }
                    }
                }

                // Base stock: smallest minimizer of the lookahead at the
                // final iterate.
                for (yi, qy) in q.iter_mut().enumerate() {
                    let y = s_min + yi as i64;
                    let future: f64 = w
                        .iter()
                        .zip(&outcomes)
                        .map(|(&wn, &d)| wn * eval(&v, y - d))
                        .sum();
                    *qy = l_one[yi] + beta * future;
                }
                // Base-stock levels are reported clamped into the table
                // window; scanning a common window for every module count
                // keeps the clamped sequence monotone.
                let mut best_y = s_min;
                let mut best_q = f64::INFINITY;
                for (yi, &qy) in q[..n_s].iter().enumerate() {
                    if qy < best_q {
                        best_q = qy;
                        best_y = s_min + yi as i64;
                    }
                }

                diag.iterations = diag.iterations.max(iterations);
                diag.residual = diag.residual.max(residual);
                base_stock.push(best_y);
                bottom_slope.push(v[1] - v[0]);
                top_slope.push(v[n_s - 1] - v[n_s - 2]);
                values.extend_from_slice(&v);
            }

            Ok(GpResult {
                values,
                base_stock,
                bottom_slope,
                top_slope,
                diag,
            })
        })
        .collect();

    let mut values = Vec::with_capacity(grid.len() * (u_max + 1) * n_s);
    let mut base_stock = Vec::with_capacity(grid.len() * (u_max + 1));
    let mut bottom_slope = Vec::with_capacity(grid.len() * (u_max + 1));
    let mut top_slope = Vec::with_capacity(grid.len() * (u_max + 1));
    let mut diag = IterationDiagnostics::default();
    for r in per_gp {
        let r = r?;
        values.extend(r.values);
        base_stock.extend(r.base_stock);
        bottom_slope.extend(r.bottom_slope);
        top_slope.extend(r.top_slope);
        diag.iterations = diag.iterations.max(r.diag.iterations);
        diag.residual = diag.residual.max(r.diag.residual);
        diag.min_iterate_delta = diag.min_iterate_delta.min(r.diag.min_iterate_delta);
    }

    Ok(ValueTable {
        location: l,
        grid: grid.clone(),
        s_min,
        s_max,
        u_max,
        beta,
        values,
        base_stock,
        bottom_slope,
        top_slope,
        diagnostics: diag,
    })
}

/// Table after exactly `steps` applications of the operator from zero
/// (finite-horizon variant used for oracle cross-checks).
pub fn static_value_iteration_steps(
    instance: &Instance,
    l: usize,
    grid: &BeliefGrid,
    steps: usize,
) -> Result<ValueTable, SlValueError> {
    static_value_iteration(
        instance,
        l,
        grid,
        &SlValueConfig {
            fixed_steps: Some(steps),
            ..SlValueConfig::default()
        },
    )
}

/// Capacity blend `(1-theta) v(gp, s, u_max) + theta v(gp, s, u)`.
pub fn blended_value(table: &ValueTable, blend: BlendSpec, gp: usize, s: i64, u: usize) -> f64 {
    let theta = blend.theta();
    (1.0 - theta) * table.value(gp, table.u_max, s) + theta * table.value(gp, u, s)
}

/// Smallest level whose one-step-ahead demand cdf reaches the newsvendor
/// fractile `b/(b+h)` — the optimal myopic base stock for infinite capacity.
pub fn myopic_base_stock(instance: &Instance, l: usize, x: &crate::modulation::Belief) -> i64 {
    let w = instance.model.one_step_demand_pmf(l, x);
    let outcomes = &instance.model.demand[l].outcomes;
    let b = instance.backorder_cost[l];
    let h = instance.holding_cost[l];
    let fractile = if b + h > 0.0 { b / (b + h) } else { 0.0 };
    let mut cdf = 0.0;
    for (n, &d) in outcomes.iter().enumerate() {
        cdf += w[n];
        if cdf >= fractile - 1e-12 {
            return d;
        }
    }
    *outcomes.last().expect("validated models have outcomes")
}

/// One line of a piecewise-linear lower envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Facet {
    pub slope: f64,
    pub intercept: f64,
}

impl Facet {
    pub fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Max over a facet list; negative infinity for an empty list.
pub fn facet_max(facets: &[Facet], x: f64) -> f64 {
    facets
        .iter()
        .map(|f| f.eval(x))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Facet representation of a blended value table: per (grid point, module
/// count) the facets over inventory, and per (grid point, inventory) the
/// facets over module count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FacetSet {
    pub location: usize,
    pub blend: BlendSpec,
    pub s_min: i64,
    pub s_max: i64,
    pub u_max: usize,
    gp_count: usize,
    gamma: Vec<Vec<Facet>>,
    theta: Vec<Vec<Facet>>,
}

impl FacetSet {
    /// Facets over inventory at fixed module count `u`.
    pub fn gamma(&self, gp: usize, u: usize) -> &[Facet] {
        &self.gamma[gp * (self.u_max + 1) + u]
    }

    /// Facets over module count at fixed inventory `s` (clamped to the
    /// table window).
    pub fn theta(&self, gp: usize, s: i64) -> &[Facet] {
        let si = (s.clamp(self.s_min, self.s_max) - self.s_min) as usize;
        let n_s = (self.s_max - self.s_min + 1) as usize;
        &self.theta[gp * n_s + si]
    }
}

/// Reconstruction tolerance facet envelopes are held to on grid arguments.
pub const FACET_RECONSTRUCTION_TOL: f64 = 1e-6;
/// Convexity slack below which a table is rejected for facet extraction.
pub const FACET_CONVEXITY_TOL: f64 = 1e-7;
/// Deviation budget for merging nearly collinear hull segments. Segments
/// whose curvature is below the tables' own convergence noise produce
/// near-parallel facet pairs with ill-conditioned crossings; merging them
/// costs at most this much reconstruction error and keeps the linear
/// programs well conditioned.
pub const FACET_MERGE_TOL: f64 = 2e-7;

/// Lower convex hull of `(x, f(x))` samples (x strictly increasing), as
/// slope/intercept facets of consecutive hull segments. Hull breakpoints
/// whose removal moves no sample by more than [`FACET_MERGE_TOL`] are
/// dropped.
pub fn lower_hull_facets(points: &[(f64, f64)]) -> Vec<Facet> {
    assert!(!points.is_empty());
    if points.len() == 1 {
        return vec![Facet {
            slope: 0.0,
            intercept: points[0].1,
        }];
    }
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for &p in points {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            // Drop b when it lies on or above the segment a-p.
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross <= 1e-12 * (1.0 + b.1.abs()) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    let hull = simplify_chain(&hull, FACET_MERGE_TOL);
    if hull.len() == 1 {
        return vec![Facet {
            slope: 0.0,
            intercept: hull[0].1,
        }];
    }
    hull.windows(2)
        .map(|seg| {
            let slope = (seg[1].1 - seg[0].1) / (seg[1].0 - seg[0].0);
            Facet {
                slope,
                intercept: seg[0].1 - slope * seg[0].0,
            }
        })
        .collect()
}

/// Greedy polyline simplification: extend each kept segment as far as the
/// chord stays within `tol` of every skipped breakpoint (checked directly).
fn simplify_chain(hull: &[(f64, f64)], tol: f64) -> Vec<(f64, f64)> {
    if hull.len() <= 2 {
        return hull.to_vec();
    }
    let mut kept = vec![hull[0]];
    let mut a = 0usize;
    while a + 1 < hull.len() {
        let mut b = a + 1;
        'extend: while b + 1 < hull.len() {
            let cand = b + 1;
            let (xa, fa) = hull[a];
            let (xc, fc) = hull[cand];
            let slope = (fc - fa) / (xc - xa);
            for &(x, f) in &hull[a + 1..cand] {
                if (fa + slope * (x - xa) - f).abs() > tol {
                    break 'extend;
                }
            }
            b = cand;
        }
        kept.push(hull[b]);
        a = b;
    }
    kept
}

fn check_reconstruction(points: &[(f64, f64)], facets: &[Facet]) -> Result<(), f64> {
    let mut worst = 0.0f64;
    for &(x, f) in points {
        worst = worst.max((facet_max(facets, x) - f).abs());
    }
    if worst <= FACET_RECONSTRUCTION_TOL {
        Ok(())
    } else {
        Err(worst)
    }
}

/// Facets of the blended table over both axes, for every grid point.
pub fn extract_facets(table: &ValueTable, blend: BlendSpec) -> Result<FacetSet, SlValueError> {
    let n_s = (table.s_max - table.s_min + 1) as usize;
    let gp_count = table.grid.len();
    let mut gamma = Vec::with_capacity(gp_count * (table.u_max + 1));
    let mut theta = Vec::with_capacity(gp_count * n_s);
    for gp in 0..gp_count {
        for u in 0..=table.u_max {
            let points: Vec<(f64, f64)> = (0..n_s)
                .map(|si| {
                    let s = table.s_min + si as i64;
                    (s as f64, blended_value(table, blend, gp, s, u))
                })
                .collect();
            convexity_guard(&points, "inventory")?;
            let facets = lower_hull_facets(&points);
            check_reconstruction(&points, &facets).map_err(|worst| {
                SlValueError::NonConvexTable(format!(
                    "inventory envelope error {worst:e} at gp {gp}, u {u}"
                ))
            })?;
            gamma.push(facets);
        }
    }
    for gp in 0..gp_count {
        for si in 0..n_s {
            let s = table.s_min + si as i64;
            let points: Vec<(f64, f64)> = (0..=table.u_max)
                .map(|u| (u as f64, blended_value(table, blend, gp, s, u)))
                .collect();
            convexity_guard(&points, "capacity")?;
            let facets = lower_hull_facets(&points);
            check_reconstruction(&points, &facets).map_err(|worst| {
                SlValueError::NonConvexTable(format!(
                    "capacity envelope error {worst:e} at gp {gp}, s {s}"
                ))
            })?;
            theta.push(facets);
        }
    }
    Ok(FacetSet {
        location: table.location,
        blend,
        s_min: table.s_min,
        s_max: table.s_max,
        u_max: table.u_max,
        gp_count,
        gamma,
        theta,
    })
}

fn convexity_guard(points: &[(f64, f64)], axis: &str) -> Result<(), SlValueError> {
    for w in points.windows(3) {
        let d2 = w[2].1 - 2.0 * w[1].1 + w[0].1;
        if d2 < -FACET_CONVEXITY_TOL {
            return Err(SlValueError::NonConvexTable(format!(
                "{axis} second difference {d2:e} at x={}",
                w[1].0
            )));
        }
    }
    Ok(())
}

/// Discounted gap bound between the exact single-location value and its
/// static-belief approximation: per-period perturbation
/// `rho = sum_d k(d) c(y_hat, d)` with `k(d)` the spread of the demand
/// likelihood across modulation states and `y_hat` the worse endpoint of the
/// production window, summed over the horizon to `rho/(1-beta)`.
pub fn bound_gap_rho(instance: &Instance, l: usize, s: i64, u: usize) -> f64 {
    let loc = &instance.model.demand[l];
    let b = instance.backorder_cost[l];
    let h = instance.holding_cost[l];
    let n_states = instance.model.n_states();
    let mut rho = 0.0f64;
    for y_hat in [s, s + instance.capacity(l, u)] {
        let mut total = 0.0;
        for (n, &d) in loc.outcomes.iter().enumerate() {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for j in 0..n_states {
                lo = lo.min(loc.pmf[j][n]);
                hi = hi.max(loc.pmf[j][n]);
            }
            total += (hi - lo) * one_period_cost(b, h, y_hat, d);
        }
        rho = rho.max(total);
    }
    rho / (1.0 - instance.discount)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::Instance;
    use crate::modulation::{belief_grid, Belief, LocationDemand, ModulationModel};

    fn single_state_model(outcomes: Vec<i64>, pmf: Vec<f64>) -> ModulationModel {
        ModulationModel {
            transition: vec![vec![1.0]],
            demand: vec![LocationDemand {
                outcomes,
                pmf: vec![pmf],
            }],
            aod: None,
        }
    }

    fn toy_instance(model: ModulationModel, modules: usize, beta: f64) -> Instance {
        let mut inst = Instance::uniform("toy", model, modules, 1, 2.0, 1.0, 1.0, 1.0, beta, 10, 0);
        inst.s_range_override = Some((-12, 12));
        inst
    }

    #[test]
    fn zero_demand_never_holds_never_backorders() {
        let inst = toy_instance(single_state_model(vec![0], vec![1.0]), 1, 0.9);
        let grid = belief_grid(1, 1, None);
        let t = static_value_iteration(&inst, 0, &grid, &SlValueConfig::default()).unwrap();
        // With one module the zero level is reachable from s in [-1, 0].
        assert!(t.value(0, 1, 0).abs() < 1e-9);
        assert!(t.value(0, 1, -1).abs() < 1e-9);
        assert_eq!(t.base_stock(0, 1), 0);
        // Positive stock can only be carried: v(s) = h s / (1 - beta).
        let expect = 3.0 / (1.0 - 0.9);
        assert!((t.value(0, 1, 3) - expect).abs() < 1e-4 * expect);
    }

    #[test]
    fn beta_zero_is_one_period_minimization() {
        let model = single_state_model(vec![0, 1, 2], vec![0.3, 0.4, 0.3]);
        let mut inst = toy_instance(model, 2, 0.5);
        inst.discount = 0.0;
        let grid = belief_grid(1, 1, None);
        let t = static_value_iteration(&inst, 0, &grid, &SlValueConfig::default()).unwrap();
        let w = [0.3, 0.4, 0.3];
        for s in -12..=12i64 {
            let mut best = f64::INFINITY;
            for y in s..=s + 2 {
                let cost: f64 = w
                    .iter()
                    .zip([0i64, 1, 2])
                    .map(|(&p, d)| p * one_period_cost(2.0, 1.0, y, d))
                    .sum();
                best = best.min(cost);
            }
            assert!(
                (t.value(0, 2, s) - best).abs() < 1e-12,
                "mismatch at s={s}"
            );
        }
    }

    #[test]
    fn deterministic_demand_exact_replenishment() {
        let inst = toy_instance(single_state_model(vec![1], vec![1.0]), 1, 0.9);
        let grid = belief_grid(1, 1, None);
        let t = static_value_iteration(&inst, 0, &grid, &SlValueConfig::default()).unwrap();
        assert!(t.value(0, 1, 0).abs() < 1e-9);
        assert_eq!(t.base_stock(0, 1), 1);
    }

    #[test]
    fn blend_endpoints_and_midpoint() {
        let model = single_state_model(vec![0, 1, 2], vec![0.3, 0.4, 0.3]);
        let inst = toy_instance(model, 2, 0.8);
        let grid = belief_grid(1, 1, None);
        let t = static_value_iteration(&inst, 0, &grid, &SlValueConfig::default()).unwrap();
        let s = -3;
        let full = t.value(0, t.u_max, s);
        let cur = t.value(0, 0, s);
        assert_eq!(blended_value(&t, BlendSpec::new(1.0).unwrap(), 0, s, 0), cur);
        assert_eq!(blended_value(&t, BlendSpec::new(0.0).unwrap(), 0, s, 0), full);
        let mid = blended_value(&t, BlendSpec::new(0.5).unwrap(), 0, s, 0);
        assert!((mid - 0.5 * (full + cur)).abs() < 1e-12);
    }

    #[test]
    fn myopic_base_stock_examples() {
        let x = Belief::degenerate(1, 0);
        // Deterministic demand.
        let inst = toy_instance(single_state_model(vec![4], vec![1.0]), 1, 0.9);
        assert_eq!(myopic_base_stock(&inst, 0, &x), 4);
        // Holding-only: order nothing beyond the smallest outcome.
        let mut free = toy_instance(single_state_model(vec![1, 3], vec![0.5, 0.5]), 1, 0.9);
        free.backorder_cost = vec![0.0];
        assert_eq!(myopic_base_stock(&free, 0, &x), 1);
        // Uniform on {0,1,2} with b=2, h=1: fractile 2/3 reached at 1.
        let uni = toy_instance(
            single_state_model(vec![0, 1, 2], vec![1.0 / 3.0; 3]),
            1,
            0.9,
        );
        assert_eq!(myopic_base_stock(&uni, 0, &x), 1);
    }

    #[test]
    fn hull_of_absolute_value_has_two_facets() {
        let points: Vec<(f64, f64)> = (-4..=4).map(|s| (s as f64, (s as f64).abs())).collect();
        let facets = lower_hull_facets(&points);
        assert_eq!(facets.len(), 2);
        assert!((facets[0].slope + 1.0).abs() < 1e-12);
        assert!((facets[1].slope - 1.0).abs() < 1e-12);
        for &(x, f) in &points {
            assert!((facet_max(&facets, x) - f).abs() < 1e-12);
        }
    }

    #[test]
    fn hull_of_affine_data_is_single_facet() {
        let points: Vec<(f64, f64)> = (0..6).map(|s| (s as f64, 2.5 * s as f64 + 1.0)).collect();
        let facets = lower_hull_facets(&points);
        assert_eq!(facets.len(), 1);
        assert!((facets[0].slope - 2.5).abs() < 1e-12);
    }

    #[test]
    fn facets_reconstruct_converged_table() {
        let model = ModulationModel {
            transition: vec![vec![0.8, 0.2], vec![0.3, 0.7]],
            demand: vec![LocationDemand {
                outcomes: vec![0, 1, 2],
                pmf: vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.3, 0.6]],
            }],
            aod: None,
        };
        let inst = toy_instance(model, 2, 0.9);
        let grid = belief_grid(2, 3, None);
        let t = static_value_iteration(&inst, 0, &grid, &SlValueConfig::default()).unwrap();
        for theta in [0.0, 0.2, 1.0] {
            let fs = extract_facets(&t, BlendSpec::new(theta).unwrap()).unwrap();
            for gp in 0..grid.len() {
                for u in 0..=t.u_max {
                    for s in t.s_min..=t.s_max {
                        let direct = blended_value(&t, fs.blend, gp, s, u);
                        let via_gamma = facet_max(fs.gamma(gp, u), s as f64);
                        let via_theta = facet_max(fs.theta(gp, s), u as f64);
                        assert!((via_gamma - direct).abs() <= FACET_RECONSTRUCTION_TOL);
                        assert!((via_theta - direct).abs() <= FACET_RECONSTRUCTION_TOL);
                    }
                }
            }
        }
    }

    #[test]
    fn rho_is_zero_without_state_information() {
        // Identical pmfs across states.
        let model = ModulationModel {
            transition: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            demand: vec![LocationDemand {
                outcomes: vec![0, 1],
                pmf: vec![vec![0.4, 0.6], vec![0.4, 0.6]],
            }],
            aod: None,
        };
        let inst = toy_instance(model, 1, 0.5);
        assert_eq!(bound_gap_rho(&inst, 0, -2, 1), 0.0);
        // Single modulation state.
        let inst1 = toy_instance(single_state_model(vec![0, 1], vec![0.4, 0.6]), 1, 0.5);
        assert_eq!(bound_gap_rho(&inst1, 0, -2, 1), 0.0);
    }

    #[test]
    fn rho_hand_example() {
        // Two states with likelihood spread 0.8 on both outcomes; at s=0 with
        // capacity 1 the worse endpoint is y=0 where the backorder term pays
        // 2 on outcome 1: rho = 1.6, divided by (1 - 0.5).
        let model = ModulationModel {
            transition: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            demand: vec![LocationDemand {
                outcomes: vec![0, 1],
                pmf: vec![vec![0.9, 0.1], vec![0.1, 0.9]],
            }],
            aod: None,
        };
        let mut inst = toy_instance(model, 1, 0.5);
        inst.fixed_capacity = vec![0];
        assert!((bound_gap_rho(&inst, 0, 0, 1) - 3.2).abs() < 1e-12);
    }

    #[test]
    fn structure_holds_on_seeded_instances() {
        use crate::instances::{build_chain, gen_demand_dists};
        for seed in [11u64, 23] {
            let g = 2i64;
            let n = 3usize;
            let dists = gen_demand_dists(n, g, 1, seed).unwrap();
            let model = ModulationModel {
                transition: build_chain(n, 0.75).unwrap(),
                demand: vec![LocationDemand {
                    outcomes: (0..=2 * g).collect(),
                    pmf: dists[0].clone(),
                }],
                aod: None,
            };
            let mut inst = Instance::uniform("struct", model, 2, g, 2.0, 1.0, 1.5, 1.5, 0.9, 10, seed);
            inst.s_range_override = Some((-15, 15));
            let pi = crate::instances::stationary(&inst).unwrap();
            let grid = belief_grid(n, 3, Some(&pi));
            let t = static_value_iteration(&inst, 0, &grid, &SlValueConfig::default()).unwrap();
            let report = t.structure_report();
            assert!(report.passes(1e-7), "structure violated: {report:?}");
        }
    }

    #[test]
    fn ample_capacity_base_stock_is_myopic() {
        // Capacity covers maximum demand at every module count, so the
        // base-stock level never moves across iterations and equals the
        // newsvendor level.
        let model = ModulationModel {
            transition: vec![vec![0.8, 0.2], vec![0.3, 0.7]],
            demand: vec![LocationDemand {
                outcomes: vec![0, 1, 2],
                pmf: vec![vec![0.6, 0.3, 0.1], vec![0.1, 0.3, 0.6]],
            }],
            aod: None,
        };
        let mut inst = toy_instance(model, 1, 0.9);
        inst.fixed_capacity = vec![2];
        let grid = belief_grid(2, 3, None);
        let t = static_value_iteration(&inst, 0, &grid, &SlValueConfig::default()).unwrap();
        for (gp, x) in grid.points().iter().enumerate() {
            let myopic = myopic_base_stock(&inst, 0, x);
            for u in 0..=t.u_max {
                assert_eq!(t.base_stock(gp, u), myopic.clamp(t.s_min, t.s_max));
            }
        }
    }

    #[test]
    fn non_convergence_is_reported() {
        let model = single_state_model(vec![0, 1], vec![0.5, 0.5]);
        let inst = toy_instance(model, 1, 0.95);
        let grid = belief_grid(1, 1, None);
        let cfg = SlValueConfig {
            max_iters: 3,
            ..SlValueConfig::default()
        };
        assert!(matches!(
            static_value_iteration(&inst, 0, &grid, &cfg),
            Err(SlValueError::ConvergenceFailure { .. })
        ));
    }
}
