//! The seven control policies, each a map from system state to a
//! transship/relocate/replenish action.
//!
//! All policies assemble a one-epoch optimization problem from the
//! single-location value tables (or their facet envelopes) and dispatch to an
//! exact solver: direct enumeration for the per-location programs, the
//! relocation DP for the coupled option-selection programs, and the
//! simplex/branch-and-bound kernel for the mixed programs.

use crate::instances::Instance;
use crate::modulation::{expected_demand, local_posterior, Belief};
use crate::optimizer::{
    solve_lp, solve_mip, solve_relocation_dp, LinearConstraint, LocationOption, MipProblem,
    OptimizerError, OptionTable, SolveStatus, INTEGRALITY_TOL,
};
use crate::sl_value::{
    blended_value, facet_max, myopic_base_stock, one_period_cost, BlendSpec, Facet, FacetSet,
    ValueTable,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("optimizer failed: {0}")]
    Optimizer(#[from] OptimizerError),
    #[error("solver returned {status:?} for {policy}")]
    SolverStatus { policy: PolicyId, status: SolveStatus },
    #[error("{policy} relaxation returned a fractional solution (gap {max_gap:e})")]
    IntegralityViolation { policy: PolicyId, max_gap: f64 },
    #[error("policy {0} requires facet envelopes")]
    MissingFacets(PolicyId),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("invalid action: {0}")]
    InvalidAction(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyId {
    Mp,
    Mnf,
    Dnf,
    Jr,
    Laj,
    Glr,
    Laglr,
}

impl PolicyId {
    pub const ALL: [PolicyId; 7] = [
        PolicyId::Mp,
        PolicyId::Mnf,
        PolicyId::Dnf,
        PolicyId::Jr,
        PolicyId::Laj,
        PolicyId::Glr,
        PolicyId::Laglr,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyId::Mp => "MP",
            PolicyId::Mnf => "MNF",
            PolicyId::Dnf => "DNF",
            PolicyId::Jr => "JR",
            PolicyId::Laj => "LAJ",
            PolicyId::Glr => "GLR",
            PolicyId::Laglr => "LAGLR",
        }
    }

    /// Whether the policy consults facet envelopes rather than raw tables.
    pub fn needs_facets(&self) -> bool {
        matches!(self, PolicyId::Laj | PolicyId::Laglr)
    }
}

impl std::fmt::Display for PolicyId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PolicyId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "MP" => Ok(PolicyId::Mp),
            "MNF" => Ok(PolicyId::Mnf),
            "DNF" => Ok(PolicyId::Dnf),
            "JR" => Ok(PolicyId::Jr),
            "LAJ" => Ok(PolicyId::Laj),
            "GLR" => Ok(PolicyId::Glr),
            "LAGLR" => Ok(PolicyId::Laglr),
            other => Err(format!("unknown policy {other:?}")),
        }
    }
}

/// How the simulated decision maker forms its belief each period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BeliefMode {
    /// Bayesian update from the realized demand vector.
    Po,
    /// Belief frozen at the stationary distribution.
    Ss,
    /// The modulation state is observed; belief is its indicator.
    Co,
}

impl BeliefMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            BeliefMode::Po => "po",
            BeliefMode::Ss => "ss",
            BeliefMode::Co => "co",
        }
    }
}

impl std::str::FromStr for BeliefMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "po" => Ok(BeliefMode::Po),
            "ss" => Ok(BeliefMode::Ss),
            "co" => Ok(BeliefMode::Co),
            other => Err(format!("unknown belief mode {other:?}")),
        }
    }
}

/// Policy selection plus its knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub policy: PolicyId,
    pub theta: BlendSpec,
    pub mode: BeliefMode,
}

impl PolicyConfig {
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if matches!(self.policy, PolicyId::Mp | PolicyId::Mnf) && self.theta.theta() != 0.0 {
            w.push(format!(
                "{} ignores the blend coefficient (theta = {})",
                self.policy,
                self.theta.theta()
            ));
        }
        w
    }
}

/// Sufficient statistic the policies act on: belief, inventory, modules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub belief: Belief,
    pub inventory: Vec<i64>,
    pub modules: Vec<usize>,
}

impl SystemState {
    pub fn validate(&self, instance: &Instance) -> Result<(), PolicyError> {
        let l = instance.locations;
        if self.inventory.len() != l || self.modules.len() != l {
            return Err(PolicyError::InvalidAction("state length mismatch".into()));
        }
        if self.belief.len() != instance.model.n_states() {
            return Err(PolicyError::InvalidAction("belief length mismatch".into()));
        }
        if self.modules.iter().sum::<usize>() != instance.total_modules {
            return Err(PolicyError::InvalidAction(
                "modules do not sum to the fleet size".into(),
            ));
        }
        for (l, &u) in self.modules.iter().enumerate() {
            if u > instance.module_cap[l] {
                return Err(PolicyError::InvalidAction(format!(
                    "module count {u} above cap at location {l}"
                )));
            }
        }
        Ok(())
    }
}

/// One epoch's full decision: inventory received, post-move modules, and
/// order-up-to levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub transship: Vec<i64>,
    pub modules_after: Vec<usize>,
    pub order_up_to: Vec<i64>,
}

impl Action {
    /// Stand-pat action: no moves, no orders.
    pub fn stay(state: &SystemState) -> Action {
        Action {
            transship: vec![0; state.inventory.len()],
            modules_after: state.modules.clone(),
            order_up_to: state.inventory.clone(),
        }
    }

    pub fn validate(&self, instance: &Instance, state: &SystemState) -> Result<(), PolicyError> {
        let l = instance.locations;
        if self.transship.len() != l || self.modules_after.len() != l || self.order_up_to.len() != l
        {
            return Err(PolicyError::InvalidAction("action length mismatch".into()));
        }
        if self.transship.iter().sum::<i64>() != 0 {
            return Err(PolicyError::InvalidAction(
                "transshipment does not balance".into(),
            ));
        }
        if self.modules_after.iter().sum::<usize>() != instance.total_modules {
            return Err(PolicyError::InvalidAction(
                "modules do not sum to the fleet size".into(),
            ));
        }
        let bounds = transship_bounds(state);
        for loc in 0..l {
            if self.modules_after[loc] > instance.module_cap[loc] {
                return Err(PolicyError::InvalidAction(format!(
                    "module cap exceeded at location {loc}"
                )));
            }
            let ds = self.transship[loc];
            let (lo, hi) = bounds[loc];
            if ds < lo || ds > hi {
                return Err(PolicyError::InvalidAction(format!(
                    "transshipment {ds} outside [{lo}, {hi}] at location {loc}"
                )));
            }
            let post = state.inventory[loc] + ds;
            let y = self.order_up_to[loc];
            let cap = instance.capacity(loc, self.modules_after[loc]);
            if y < post || y > post + cap {
                return Err(PolicyError::InvalidAction(format!(
                    "order-up-to {y} outside [{post}, {}] at location {loc}",
                    post + cap
                )));
            }
        }
        Ok(())
    }

    /// Movement cost of this action starting from `state`.
    pub fn movement_cost(&self, instance: &Instance, state: &SystemState) -> f64 {
        let mut cost = 0.0;
        let mut moved_modules = 0i64;
        for l in 0..instance.locations {
            let ds = self.transship[l];
            if ds > 0 {
                cost += instance.transship_in_cost[l] * ds as f64;
            } else {
                cost += instance.transship_out_cost[l] * (-ds) as f64;
            }
            moved_modules += (self.modules_after[l] as i64 - state.modules[l] as i64).abs();
        }
        cost + instance.module_move_cost * moved_modules as f64 / 2.0
    }
}

/// Immutable bundle the policies read: the instance, one value table per
/// location (all on the same belief grid), optional facet envelopes, and the
/// blend weight.
pub struct PolicyContext<'a> {
    pub instance: &'a Instance,
    pub tables: &'a [ValueTable],
    pub facets: Option<&'a [FacetSet]>,
    pub blend: BlendSpec,
}

impl<'a> PolicyContext<'a> {
    pub fn new(
        instance: &'a Instance,
        tables: &'a [ValueTable],
        facets: Option<&'a [FacetSet]>,
        blend: BlendSpec,
    ) -> Self {
        debug_assert_eq!(tables.len(), instance.locations);
        PolicyContext {
            instance,
            tables,
            facets,
            blend,
        }
    }

    fn facet_sets(&self, policy: PolicyId) -> Result<&'a [FacetSet], PolicyError> {
        self.facets.ok_or(PolicyError::MissingFacets(policy))
    }
}

/// Per-location transshipment window `[-(s_l)^+, sum of other (s_k)^+]`.
pub fn transship_bounds(state: &SystemState) -> Vec<(i64, i64)> {
    let positive_total: i64 = state.inventory.iter().map(|&s| s.max(0)).sum();
    state
        .inventory
        .iter()
        .map(|&s| (-s.max(0), positive_total - s.max(0)))
        .collect()
}

/// One-step-ahead demand weights `w[l][n]` under the state's belief.
fn scenario_weights(instance: &Instance, x: &Belief) -> Vec<Vec<f64>> {
    (0..instance.locations)
        .map(|l| instance.model.one_step_demand_pmf(l, x))
        .collect()
}

/// Grid index of the local posterior per (location, outcome); `None` where
/// the outcome has no mass under the belief.
fn posterior_grid_indices(ctx: &PolicyContext, x: &Belief) -> Vec<Vec<Option<usize>>> {
    let inst = ctx.instance;
    (0..inst.locations)
        .map(|l| {
            let grid = &ctx.tables[l].grid;
            inst.model.demand[l]
                .outcomes
                .iter()
                .map(|&d| {
                    local_posterior(&inst.model, l, d, x)
                        .ok()
                        .map(|post| grid.nearest(&post))
                })
                .collect()
        })
        .collect()
}

/// Expected one-period cost plus discounted table lookup at location `l`
/// when the order-up-to level is `y` and the future is priced at module
/// count `u_arg`: the per-location stage cost every rollout policy shares.
fn local_stage_cost(
    ctx: &PolicyContext,
    l: usize,
    weights: &[f64],
    post_gps: &[Option<usize>],
    u_arg: usize,
    y: i64,
) -> f64 {
    let inst = ctx.instance;
    let b = inst.backorder_cost[l];
    let h = inst.holding_cost[l];
    let beta = inst.discount;
    let outcomes = &inst.model.demand[l].outcomes;
    let mut cost = 0.0;
    for (n, &d) in outcomes.iter().enumerate() {
        let w = weights[n];
        if w <= 0.0 {
            continue;
        }
        let Some(gp) = post_gps[n] else { continue };
        cost += w
            * (one_period_cost(b, h, y, d)
                + beta * blended_value(&ctx.tables[l], ctx.blend, gp, y - d, u_arg));
    }
    cost
}

/// Smallest-order minimizer of the stage cost over the production window.
fn best_order(
    ctx: &PolicyContext,
    l: usize,
    weights: &[f64],
    post_gps: &[Option<usize>],
    u_arg: usize,
    s_post: i64,
) -> (i64, f64) {
    let cap = ctx.instance.capacity(l, u_arg);
    let mut best_q = 0i64;
    let mut best = f64::INFINITY;
    for q in 0..=cap {
        let c = local_stage_cost(ctx, l, weights, post_gps, u_arg, s_post + q);
        if c < best {
            best = c;
            best_q = q;
        }
    }
    (best_q, best)
}

/// Cost of the option (receive `ds` units, receive `dm` modules, then order
/// optimally) in the joint rollout program, with the chosen order returned.
pub fn jr_option_cost(
    ctx: &PolicyContext,
    state: &SystemState,
    weights: &[Vec<f64>],
    post_gps: &[Vec<Option<usize>>],
    l: usize,
    ds: i64,
    dm: i64,
) -> (i64, f64) {
    let inst = ctx.instance;
    let u_new = (state.modules[l] as i64 + dm) as usize;
    let (q, inner) = best_order(
        ctx,
        l,
        &weights[l],
        &post_gps[l],
        u_new,
        state.inventory[l] + ds,
    );
    let movement =
        transship_cost(inst, l, ds) + inst.module_move_cost * dm.unsigned_abs() as f64 / 2.0;
    (q, movement + inner)
}

/// Cost of the option (receive `ds` units, receive `dm` modules) in the
/// relocation step of the global-local rollout: movement plus the blended
/// stationary value at the post-move state.
pub fn glr_option_cost(
    ctx: &PolicyContext,
    state: &SystemState,
    gp_now: usize,
    l: usize,
    ds: i64,
    dm: i64,
) -> f64 {
    let inst = ctx.instance;
    let u_new = (state.modules[l] as i64 + dm) as usize;
    let value = blended_value(
        &ctx.tables[l],
        ctx.blend,
        gp_now,
        state.inventory[l] + ds,
        u_new,
    );
    transship_cost(inst, l, ds) + inst.module_move_cost * dm.unsigned_abs() as f64 / 2.0 + value
}

fn transship_cost(instance: &Instance, l: usize, ds: i64) -> f64 {
    if ds > 0 {
        instance.transship_in_cost[l] * ds as f64
    } else {
        instance.transship_out_cost[l] * (-ds) as f64
    }
}

/// Order-up-to level `min(max(s*(x), s'), s' + capacity)`: the myopic
/// infinite-capacity base stock clamped into the reachable window.
pub fn local_order_up_to(
    instance: &Instance,
    l: usize,
    x: &Belief,
    s_post: i64,
    u_post: usize,
) -> i64 {
    let target = myopic_base_stock(instance, l, x);
    target.max(s_post).min(s_post + instance.capacity(l, u_post))
}

fn module_delta_range(instance: &Instance, state: &SystemState, l: usize) -> (i64, i64) {
    if instance.modules_prohibitive() {
        (0, 0)
    } else {
        (
            -(state.modules[l] as i64),
            instance.module_cap[l] as i64 - state.modules[l] as i64,
        )
    }
}

fn transship_delta_range(instance: &Instance, state: &SystemState, l: usize) -> (i64, i64) {
    if instance.transship_prohibitive(l) {
        (0, 0)
    } else {
        transship_bounds(state)[l]
    }
}

/// Dispatch on the policy id.
pub fn act(
    policy: PolicyId,
    ctx: &PolicyContext,
    state: &SystemState,
) -> Result<Action, PolicyError> {
    match policy {
        PolicyId::Mp => act_mp(ctx, state),
        PolicyId::Mnf => act_mnf(ctx, state),
        PolicyId::Dnf => act_dnf(ctx, state),
        PolicyId::Jr => act_jr(ctx, state),
        PolicyId::Laj => act_laj(ctx, state).map(|(a, _)| a),
        PolicyId::Glr => act_glr(ctx, state),
        PolicyId::Laglr => act_laglr(ctx, state),
    }
}

/// Myopic policy: one-period expected cost plus movement costs, solved as an
/// integer program over transshipment, module moves, and order-up-to levels.
pub fn act_mp(ctx: &PolicyContext, state: &SystemState) -> Result<Action, PolicyError> {
    let inst = ctx.instance;
    let weights = scenario_weights(inst, &state.belief);
    let (problem, layout) = mp_program(ctx, state, &weights);
    let sol = solve_mip(&problem);
    if !sol.is_optimal() {
        // The stand-pat action is always feasible, so anything else is a bug.
        return Err(PolicyError::SolverStatus {
            policy: PolicyId::Mp,
            status: sol.status,
        });
    }
    let action = layout.decode(inst, &sol.values);
    action.validate(inst, state)?;
    Ok(action)
}

/// Variable layout shared by the MP and LAJ programs.
struct JointLayout {
    stride: usize,
    num_outcomes: Vec<usize>,
    /// Offsets within a location block.
    ds_plus: usize,
    ds_minus: usize,
    u_after: usize,
    y: usize,
    r0: usize,
}

impl JointLayout {
    fn base(&self, l: usize) -> usize {
        l * self.stride
    }

    fn decode(&self, instance: &Instance, values: &[f64]) -> Action {
        let l_count = instance.locations;
        let mut transship = Vec::with_capacity(l_count);
        let mut modules_after = Vec::with_capacity(l_count);
        let mut order_up_to = Vec::with_capacity(l_count);
        for l in 0..l_count {
            let b = self.base(l);
            let plus = values[b + self.ds_plus].round() as i64;
            let minus = values[b + self.ds_minus].round() as i64;
            transship.push(plus - minus);
            modules_after.push(values[b + self.u_after].round() as usize);
            order_up_to.push(values[b + self.y].round() as i64);
        }
        Action {
            transship,
            modules_after,
            order_up_to,
        }
    }
}

/// Shared rows of the joint programs: flow balance for modules and
/// transshipped inventory, module-move linearization, the production window,
/// and the held/backordered scenario rows; returns the block layout.
fn joint_program_base(
    ctx: &PolicyContext,
    state: &SystemState,
    extra_per_loc: usize,
) -> (MipProblem, JointLayout) {
    let inst = ctx.instance;
    let l_count = inst.locations;
    let num_outcomes: Vec<usize> = (0..l_count)
        .map(|l| inst.model.demand[l].outcomes.len())
        .collect();
    let max_m = num_outcomes.iter().copied().max().unwrap_or(0);
    // Block: ds+, ds-, u', y, m+, m-, [extra], r[0..M], o[0..M].
    let stride = 6 + extra_per_loc + 2 * max_m;
    let layout = JointLayout {
        stride,
        num_outcomes: num_outcomes.clone(),
        ds_plus: 0,
        ds_minus: 1,
        u_after: 2,
        y: 3,
        r0: 6 + extra_per_loc,
    };
    let m_plus = 4usize;
    let m_minus = 5usize;

    let mut p = MipProblem::new(l_count * stride);
    let bounds = transship_bounds(state);
    let mut u_row = Vec::with_capacity(l_count);
    let mut flow_row = Vec::with_capacity(2 * l_count);
    for l in 0..l_count {
        let b = layout.base(l);
        let s = state.inventory[l];
        let receive_cap = if inst.transship_prohibitive(l) {
            0
        } else {
            bounds[l].1
        };
        let send_cap = if inst.transship_prohibitive(l) {
            0
        } else {
            s.max(0)
        };
        p.upper[b + layout.ds_plus] = receive_cap as f64;
        p.integer[b + layout.ds_plus] = true;
        p.objective[b + layout.ds_plus] = inst.transship_in_cost[l];
        p.upper[b + layout.ds_minus] = send_cap as f64;
        p.integer[b + layout.ds_minus] = true;
        p.objective[b + layout.ds_minus] = inst.transship_out_cost[l];

        let (u_lo, u_hi) = if inst.modules_prohibitive() {
            (state.modules[l] as f64, state.modules[l] as f64)
        } else {
            (0.0, inst.module_cap[l] as f64)
        };
        p.lower[b + layout.u_after] = u_lo;
        p.upper[b + layout.u_after] = u_hi;
        p.integer[b + layout.u_after] = true;

        let y_lo = s - s.max(0);
        let y_hi = s + receive_cap + inst.capacity(l, inst.module_cap[l]);
        p.lower[b + layout.y] = y_lo as f64;
        p.upper[b + layout.y] = y_hi as f64;
        p.integer[b + layout.y] = true;

        for m in [m_plus, m_minus] {
            p.upper[b + m] = inst.total_modules as f64;
            p.objective[b + m] = inst.module_move_cost / 2.0;
        }
        // m+ - m- = u' - u.
        p.constraints.push(LinearConstraint::eq(
            vec![
                (b + m_plus, 1.0),
                (b + m_minus, -1.0),
                (b + layout.u_after, -1.0),
            ],
            -(state.modules[l] as f64),
        ));
        // Production window: s + ds <= y <= s + ds + U + u' G.
        p.constraints.push(LinearConstraint::ge(
            vec![
                (b + layout.y, 1.0),
                (b + layout.ds_plus, -1.0),
                (b + layout.ds_minus, 1.0),
            ],
            s as f64,
        ));
        p.constraints.push(LinearConstraint::le(
            vec![
                (b + layout.y, 1.0),
                (b + layout.ds_plus, -1.0),
                (b + layout.ds_minus, 1.0),
                (b + layout.u_after, -(inst.module_size as f64)),
            ],
            (s + inst.fixed_capacity[l]) as f64,
        ));
        // Held/backordered scenario rows: r >= y - d, o >= d - y.
        for (n, &d) in inst.model.demand[l].outcomes.iter().enumerate() {
            let r = b + layout.r0 + n;
            let o = b + layout.r0 + num_outcomes[l] + n;
            p.constraints.push(LinearConstraint::ge(
                vec![(r, 1.0), (b + layout.y, -1.0)],
                -(d as f64),
            ));
            p.constraints.push(LinearConstraint::ge(
                vec![(o, 1.0), (b + layout.y, 1.0)],
                d as f64,
            ));
        }
        u_row.push((b + layout.u_after, 1.0));
        flow_row.push((b + layout.ds_plus, 1.0));
        flow_row.push((b + layout.ds_minus, -1.0));
    }
    p.constraints
        .push(LinearConstraint::eq(u_row, inst.total_modules as f64));
    p.constraints.push(LinearConstraint::eq(flow_row, 0.0));
    (p, layout)
}

fn mp_program(
    ctx: &PolicyContext,
    state: &SystemState,
    weights: &[Vec<f64>],
) -> (MipProblem, JointLayout) {
    let inst = ctx.instance;
    let (mut p, layout) = joint_program_base(ctx, state, 0);
    for l in 0..inst.locations {
        let b = layout.base(l);
        for n in 0..layout.num_outcomes[l] {
            p.objective[b + layout.r0 + n] = weights[l][n] * inst.holding_cost[l];
            p.objective[b + layout.r0 + layout.num_outcomes[l] + n] =
                weights[l][n] * inst.backorder_cost[l];
        }
    }
    (p, layout)
}

/// The joint-rollout objective at a concrete action: movement cost plus the
/// per-location stage costs.
pub fn jr_objective(ctx: &PolicyContext, state: &SystemState, action: &Action) -> f64 {
    let inst = ctx.instance;
    let weights = scenario_weights(inst, &state.belief);
    let post_gps = posterior_grid_indices(ctx, &state.belief);
    let mut cost = action.movement_cost(inst, state);
    for l in 0..inst.locations {
        cost += local_stage_cost(
            ctx,
            l,
            &weights[l],
            &post_gps[l],
            action.modules_after[l],
            action.order_up_to[l],
        );
    }
    cost
}

/// One-period expected cost plus movement cost of an action — the objective
/// the myopic policy minimizes.
pub fn mp_objective(ctx: &PolicyContext, state: &SystemState, action: &Action) -> f64 {
    let inst = ctx.instance;
    let weights = scenario_weights(inst, &state.belief);
    let mut cost = action.movement_cost(inst, state);
    for l in 0..inst.locations {
        let y = action.order_up_to[l];
        for (n, &d) in inst.model.demand[l].outcomes.iter().enumerate() {
            cost += weights[l][n]
                * one_period_cost(inst.backorder_cost[l], inst.holding_cost[l], y, d);
        }
    }
    cost
}

/// Myopic no-flexibility policy: no moves, order up to the myopic base stock
/// within the static capacity.
pub fn act_mnf(ctx: &PolicyContext, state: &SystemState) -> Result<Action, PolicyError> {
    let inst = ctx.instance;
    let order_up_to = (0..inst.locations)
        .map(|l| {
            local_order_up_to(
                inst,
                l,
                &state.belief,
                state.inventory[l],
                state.modules[l],
            )
        })
        .collect();
    Ok(Action {
        transship: vec![0; inst.locations],
        modules_after: state.modules.clone(),
        order_up_to,
    })
}

/// Dynamic no-flexibility policy: no moves; production chosen per location
/// by minimizing the stage cost with the future priced at the static module
/// configuration.
pub fn act_dnf(ctx: &PolicyContext, state: &SystemState) -> Result<Action, PolicyError> {
    let inst = ctx.instance;
    let weights = scenario_weights(inst, &state.belief);
    let post_gps = posterior_grid_indices(ctx, &state.belief);
    let order_up_to = (0..inst.locations)
        .map(|l| {
            let (q, _) = best_order(
                ctx,
                l,
                &weights[l],
                &post_gps[l],
                state.modules[l],
                state.inventory[l],
            );
            state.inventory[l] + q
        })
        .collect();
    Ok(Action {
        transship: vec![0; inst.locations],
        modules_after: state.modules.clone(),
        order_up_to,
    })
}

/// Joint rollout: every location picks an option (inventory received,
/// modules received, order) with both flows balanced, scored by movement
/// cost plus the stage cost; solved exactly by the relocation DP.
pub fn act_jr(ctx: &PolicyContext, state: &SystemState) -> Result<Action, PolicyError> {
    let inst = ctx.instance;
    let weights = scenario_weights(inst, &state.belief);
    let post_gps = posterior_grid_indices(ctx, &state.belief);
    let mut table = OptionTable::default();
    for l in 0..inst.locations {
        let (ds_lo, ds_hi) = transship_delta_range(inst, state, l);
        let (dm_lo, dm_hi) = module_delta_range(inst, state, l);
        let mut opts = Vec::new();
        for ds in ds_lo..=ds_hi {
            for dm in dm_lo..=dm_hi {
                let (q, cost) = jr_option_cost(ctx, state, &weights, &post_gps, l, ds, dm);
                opts.push(LocationOption {
                    delta_s: ds,
                    delta_m: dm,
                    cost,
                    payload: q as usize,
                });
            }
        }
        table.locations.push(opts);
    }
    let picks = solve_relocation_dp(&table)?;
    let mut action = Action::stay(state);
    for (l, &i) in picks.iter().enumerate() {
        let opt = &table.locations[l][i];
        action.transship[l] = opt.delta_s;
        action.modules_after[l] = (state.modules[l] as i64 + opt.delta_m) as usize;
        action.order_up_to[l] = state.inventory[l] + opt.delta_s + opt.payload as i64;
    }
    action.validate(inst, state)?;
    Ok(action)
}

/// Global-local rollout: a relocation step priced by the blended stationary
/// value at the post-move state, then local order-up-to replenishment.
pub fn act_glr(ctx: &PolicyContext, state: &SystemState) -> Result<Action, PolicyError> {
    let inst = ctx.instance;
    let gp_now = ctx.tables[0].grid.nearest(&state.belief);
    let mut table = OptionTable::default();
    for l in 0..inst.locations {
        let (ds_lo, ds_hi) = transship_delta_range(inst, state, l);
        let (dm_lo, dm_hi) = module_delta_range(inst, state, l);
        let mut opts = Vec::new();
        for ds in ds_lo..=ds_hi {
            for dm in dm_lo..=dm_hi {
                opts.push(LocationOption {
                    delta_s: ds,
                    delta_m: dm,
                    cost: glr_option_cost(ctx, state, gp_now, l, ds, dm),
                    payload: 0,
                });
            }
        }
        table.locations.push(opts);
    }
    let picks = solve_relocation_dp(&table)?;
    let mut action = Action::stay(state);
    for (l, &i) in picks.iter().enumerate() {
        let opt = &table.locations[l][i];
        let u_new = (state.modules[l] as i64 + opt.delta_m) as usize;
        action.transship[l] = opt.delta_s;
        action.modules_after[l] = u_new;
        action.order_up_to[l] = local_order_up_to(
            inst,
            l,
            &state.belief,
            state.inventory[l] + opt.delta_s,
            u_new,
        );
    }
    action.validate(inst, state)?;
    Ok(action)
}

/// Diagnostics of a lookahead solve.
#[derive(Debug, Clone, Copy)]
pub struct LookaheadDiagnostics {
    /// Largest distance of a marked-integer variable from an integer.
    pub max_integrality_gap: f64,
    /// Whether the pure LP path was used.
    pub solved_as_lp: bool,
}

/// Epigraph rows are generated lazily: each envelope starts from its two
/// extreme facets, and after every solve the most violated facet at the
/// solution's argument is added until the envelope holds. This keeps the
/// programs small and avoids stacking near-parallel rows, and terminates
/// because every round adds a facet from a finite set.
struct LazyEnvelope<'a> {
    facets: &'a [Facet],
    added: Vec<bool>,
    /// (epigraph variable, argument variable, argument shift): rows have the
    /// form `epi - slope * var >= intercept + slope * shift`.
    epi_var: usize,
    arg_coeffs: Vec<(usize, f64)>,
    arg_shift: f64,
}

impl<'a> LazyEnvelope<'a> {
    fn new(facets: &'a [Facet], epi_var: usize, arg_coeffs: Vec<(usize, f64)>, arg_shift: f64) -> Self {
        LazyEnvelope {
            facets,
            added: vec![false; facets.len()],
            epi_var,
            arg_coeffs,
            arg_shift,
        }
    }

    fn row(&self, idx: usize) -> LinearConstraint {
        let f = self.facets[idx];
        let mut coeffs = vec![(self.epi_var, 1.0)];
        for &(var, c) in &self.arg_coeffs {
            coeffs.push((var, -f.slope * c));
        }
        LinearConstraint::ge(coeffs, f.intercept + f.slope * self.arg_shift)
    }

    fn seed(&mut self, p: &mut MipProblem) {
        let last = self.facets.len() - 1;
        for idx in [0, last] {
            if !self.added[idx] {
                self.added[idx] = true;
                p.constraints.push(self.row(idx));
            }
        }
    }

    /// Argument value at a solution.
    fn argument(&self, values: &[f64]) -> f64 {
        self.arg_coeffs
            .iter()
            .map(|&(var, c)| c * values[var])
            .sum::<f64>()
            + self.arg_shift
    }

    /// Add the most violated facet at the solution, if any.
    fn separate(&mut self, p: &mut MipProblem, values: &[f64]) -> bool {
        let arg = self.argument(values);
        let epi = values[self.epi_var];
        let mut best: Option<(usize, f64)> = None;
        for (idx, f) in self.facets.iter().enumerate() {
            if self.added[idx] {
                continue;
            }
            let v = f.eval(arg);
            if best.map(|(_, bv)| v > bv).unwrap_or(true) {
                best = Some((idx, v));
            }
        }
        match best {
            Some((idx, v)) if v > epi + 1e-9 * (1.0 + epi.abs()) => {
                self.added[idx] = true;
                p.constraints.push(self.row(idx));
                true
            }
            _ => false,
        }
    }
}

fn solve_with_lazy_envelopes(
    policy: PolicyId,
    p: &mut MipProblem,
    envelopes: &mut [LazyEnvelope],
    as_lp: bool,
) -> Result<Vec<f64>, PolicyError> {
    for env in envelopes.iter_mut() {
        env.seed(p);
    }
    // Converge the facet set on the cheap LP relaxation first; the integer
    // solve then usually needs no further rows.
    loop {
        let sol = solve_lp(p);
        if !sol.is_optimal() {
            return Err(PolicyError::SolverStatus {
                policy,
                status: sol.status,
            });
        }
        let mut added = false;
        for env in envelopes.iter_mut() {
            added |= env.separate(p, &sol.values);
        }
        if !added {
            if as_lp {
                return Ok(sol.values);
            }
            break;
        }
    }
    loop {
        let sol = solve_mip(p);
        if !sol.is_optimal() {
            return Err(PolicyError::SolverStatus {
                policy,
                status: sol.status,
            });
        }
        let mut added = false;
        for env in envelopes.iter_mut() {
            added |= env.separate(p, &sol.values);
        }
        if !added {
            return Ok(sol.values);
        }
    }
}

/// Lookahead joint policy: the joint program with the discounted future
/// replaced by facet envelopes of the blended table (over inventory at the
/// current module count, and over modules at the current inventory). With
/// unit modules the LP relaxation is exact and is asserted integral.
pub fn act_laj(
    ctx: &PolicyContext,
    state: &SystemState,
) -> Result<(Action, LookaheadDiagnostics), PolicyError> {
    let inst = ctx.instance;
    let facets = ctx.facet_sets(PolicyId::Laj)?;
    let weights = scenario_weights(inst, &state.belief);
    let (mut p, layout) = joint_program_base(ctx, state, 2);
    let zeta_off = 6usize;
    let eta_off = 7usize;
    let gp_now = ctx.tables[0].grid.nearest(&state.belief);
    let mut envelopes = Vec::with_capacity(2 * inst.locations);
    for l in 0..inst.locations {
        let b = layout.base(l);
        for n in 0..layout.num_outcomes[l] {
            p.objective[b + layout.r0 + n] = weights[l][n] * inst.holding_cost[l];
            p.objective[b + layout.r0 + layout.num_outcomes[l] + n] =
                weights[l][n] * inst.backorder_cost[l];
        }
        for off in [zeta_off, eta_off] {
            p.lower[b + off] = f64::NEG_INFINITY;
            p.upper[b + off] = f64::INFINITY;
            p.objective[b + off] = inst.discount / 2.0;
        }
        let ed = expected_demand(&inst.model, l, &state.belief).round();
        // zeta >= slope (y - ed) + intercept over the inventory envelope.
        envelopes.push(LazyEnvelope::new(
            facets[l].gamma(gp_now, state.modules[l]),
            b + zeta_off,
            vec![(b + layout.y, 1.0)],
            -ed,
        ));
        // eta >= slope u' + intercept over the capacity envelope.
        envelopes.push(LazyEnvelope::new(
            facets[l].theta(gp_now, state.inventory[l]),
            b + eta_off,
            vec![(b + layout.u_after, 1.0)],
            0.0,
        ));
        perturb_movement_objective(
            &mut p,
            l,
            b + layout.ds_plus,
            b + layout.ds_minus,
            b + layout.u_after,
        );
    }
    let unit_modules = inst.module_size == 1;
    let values = solve_with_lazy_envelopes(PolicyId::Laj, &mut p, &mut envelopes, unit_modules)?;
    let gap = max_integrality_gap(&p, &values);
    if unit_modules && gap > INTEGRALITY_TOL {
        return Err(PolicyError::IntegralityViolation {
            policy: PolicyId::Laj,
            max_gap: gap,
        });
    }
    let action = layout.decode(inst, &values);
    action.validate(inst, state)?;
    Ok((
        action,
        LookaheadDiagnostics {
            max_integrality_gap: gap,
            solved_as_lp: unit_modules,
        },
    ))
}

/// The objective act_laj minimizes, evaluated at a concrete action.
pub fn laj_objective(ctx: &PolicyContext, state: &SystemState, action: &Action) -> f64 {
    let inst = ctx.instance;
    let facets = ctx.facets.expect("facets required");
    let gp_now = ctx.tables[0].grid.nearest(&state.belief);
    let mut cost = mp_objective(ctx, state, action);
    for l in 0..inst.locations {
        let ed = expected_demand(&inst.model, l, &state.belief).round();
        let zeta = facet_max(
            facets[l].gamma(gp_now, state.modules[l]),
            action.order_up_to[l] as f64 - ed,
        );
        let eta = facet_max(
            facets[l].theta(gp_now, state.inventory[l]),
            action.modules_after[l] as f64,
        );
        cost += inst.discount * (zeta + eta) / 2.0;
    }
    cost
}

/// Lookahead global-local policy: relocation decided by a pure LP over the
/// facet envelopes (no production variables), then order-up-to replenishment.
pub fn act_laglr(ctx: &PolicyContext, state: &SystemState) -> Result<Action, PolicyError> {
    let inst = ctx.instance;
    let facets = ctx.facet_sets(PolicyId::Laglr)?;
    let l_count = inst.locations;
    // Block: ds+, ds-, u', m+, m-, zeta, eta.
    let stride = 7usize;
    let (ds_plus, ds_minus, u_after, m_plus, m_minus, zeta_off, eta_off) = (0, 1, 2, 3, 4, 5, 6);
    let mut p = MipProblem::new(l_count * stride);
    let bounds = transship_bounds(state);
    let gp_now = ctx.tables[0].grid.nearest(&state.belief);
    let mut envelopes = Vec::with_capacity(2 * l_count);
    let mut u_row = Vec::new();
    let mut flow_row = Vec::new();
    for l in 0..l_count {
        let b = l * stride;
        let s = state.inventory[l];
        let receive_cap = if inst.transship_prohibitive(l) {
            0
        } else {
            bounds[l].1
        };
        let send_cap = if inst.transship_prohibitive(l) {
            0
        } else {
            s.max(0)
        };
        p.upper[b + ds_plus] = receive_cap as f64;
        p.integer[b + ds_plus] = true;
        p.objective[b + ds_plus] = inst.transship_in_cost[l];
        p.upper[b + ds_minus] = send_cap as f64;
        p.integer[b + ds_minus] = true;
        p.objective[b + ds_minus] = inst.transship_out_cost[l];
        let (u_lo, u_hi) = if inst.modules_prohibitive() {
            (state.modules[l] as f64, state.modules[l] as f64)
        } else {
            (0.0, inst.module_cap[l] as f64)
        };
        p.lower[b + u_after] = u_lo;
        p.upper[b + u_after] = u_hi;
        p.integer[b + u_after] = true;
        for m in [m_plus, m_minus] {
            p.upper[b + m] = inst.total_modules as f64;
            p.objective[b + m] = inst.module_move_cost / 2.0;
        }
        for off in [zeta_off, eta_off] {
            p.lower[b + off] = f64::NEG_INFINITY;
            p.upper[b + off] = f64::INFINITY;
            p.objective[b + off] = 0.5;
        }
        p.constraints.push(LinearConstraint::eq(
            vec![(b + m_plus, 1.0), (b + m_minus, -1.0), (b + u_after, -1.0)],
            -(state.modules[l] as f64),
        ));
        // zeta >= slope (s + ds+ - ds-) + intercept over the inventory
        // envelope; eta >= slope u' + intercept over the capacity envelope.
        envelopes.push(LazyEnvelope::new(
            facets[l].gamma(gp_now, state.modules[l]),
            b + zeta_off,
            vec![(b + ds_plus, 1.0), (b + ds_minus, -1.0)],
            s as f64,
        ));
        envelopes.push(LazyEnvelope::new(
            facets[l].theta(gp_now, state.inventory[l]),
            b + eta_off,
            vec![(b + u_after, 1.0)],
            0.0,
        ));
        perturb_movement_objective(&mut p, l, b + ds_plus, b + ds_minus, b + u_after);
        u_row.push((b + u_after, 1.0));
        flow_row.push((b + ds_plus, 1.0));
        flow_row.push((b + ds_minus, -1.0));
    }
    p.constraints
        .push(LinearConstraint::eq(u_row, inst.total_modules as f64));
    p.constraints.push(LinearConstraint::eq(flow_row, 0.0));

    let values = solve_with_lazy_envelopes(PolicyId::Laglr, &mut p, &mut envelopes, true)?;
    let gap = max_integrality_gap(&p, &values);
    if gap > INTEGRALITY_TOL {
        return Err(PolicyError::IntegralityViolation {
            policy: PolicyId::Laglr,
            max_gap: gap,
        });
    }
    let mut action = Action::stay(state);
    for l in 0..l_count {
        let b = l * stride;
        let plus = values[b + ds_plus].round() as i64;
        let minus = values[b + ds_minus].round() as i64;
        let u_new = values[b + u_after].round() as usize;
        action.transship[l] = plus - minus;
        action.modules_after[l] = u_new;
        action.order_up_to[l] = local_order_up_to(
            inst,
            l,
            &state.belief,
            state.inventory[l] + plus - minus,
            u_new,
        );
    }
    action.validate(inst, state)?;
    Ok(action)
}

/// The relocation objective act_laglr minimizes, at a concrete
/// (transship, modules) choice.
pub fn laglr_objective(ctx: &PolicyContext, state: &SystemState, action: &Action) -> f64 {
    let inst = ctx.instance;
    let facets = ctx.facets.expect("facets required");
    let gp_now = ctx.tables[0].grid.nearest(&state.belief);
    let mut cost = action.movement_cost(inst, state);
    for l in 0..inst.locations {
        let zeta = facet_max(
            facets[l].gamma(gp_now, state.modules[l]),
            (state.inventory[l] + action.transship[l]) as f64,
        );
        let eta = facet_max(
            facets[l].theta(gp_now, state.inventory[l]),
            action.modules_after[l] as f64,
        );
        cost += (zeta + eta) / 2.0;
    }
    cost
}

/// Tie-break weight added to the lookahead programs' movement objectives.
/// With free movement the optimal face is degenerate and a simplex vertex on
/// it can be fractional even though an integral optimum exists; a strictly
/// increasing per-location perturbation steers the solve to the integral
/// endpoint (fewer moves, lower-indexed destinations). Orders of magnitude
/// below any genuine cost difference.
const TIE_PERTURBATION: f64 = 1e-9;

fn perturb_movement_objective(
    p: &mut MipProblem,
    l: usize,
    ds_plus: usize,
    ds_minus: usize,
    u_after: usize,
) {
    let w = TIE_PERTURBATION * (1.0 + 0.1 * l as f64);
    p.objective[ds_plus] += w;
    p.objective[ds_minus] += w;
    p.objective[u_after] += TIE_PERTURBATION * 0.01 * l as f64;
}

fn max_integrality_gap(problem: &MipProblem, values: &[f64]) -> f64 {
    values
        .iter()
        .enumerate()
        .filter(|(j, _)| problem.integer[*j])
        .map(|(_, &v)| (v - v.round()).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::Instance;
    use crate::modulation::{belief_grid, BeliefGrid, LocationDemand, ModulationModel};
    use crate::sl_value::{extract_facets, static_value_iteration, SlValueConfig};

    fn uniform_model(l: usize, transition: Vec<Vec<f64>>, pmfs: Vec<Vec<f64>>) -> ModulationModel {
        let outcomes: Vec<i64> = (0..pmfs[0].len() as i64).collect();
        ModulationModel {
            transition,
            demand: (0..l)
                .map(|_| LocationDemand {
                    outcomes: outcomes.clone(),
                    pmf: pmfs.clone(),
                })
                .collect(),
            aod: None,
        }
    }

    struct Fixture {
        instance: Instance,
        tables: Vec<ValueTable>,
        facets: Vec<FacetSet>,
        grid: BeliefGrid,
    }

    fn build_fixture(instance: Instance, theta: f64) -> Fixture {
        let pi = crate::instances::stationary(&instance).ok();
        let grid = belief_grid(instance.model.n_states(), 3, pi.as_ref());
        let blend = BlendSpec::new(theta).unwrap();
        let tables: Vec<ValueTable> = (0..instance.locations)
            .map(|l| {
                static_value_iteration(&instance, l, &grid, &SlValueConfig::default()).unwrap()
            })
            .collect();
        let facets = tables
            .iter()
            .map(|t| extract_facets(t, blend).unwrap())
            .collect();
        Fixture {
            instance,
            tables,
            facets,
            grid,
        }
    }

    fn ctx<'a>(f: &'a Fixture, theta: f64) -> PolicyContext<'a> {
        PolicyContext::new(
            &f.instance,
            &f.tables,
            Some(&f.facets),
            BlendSpec::new(theta).unwrap(),
        )
    }

    fn two_location_instance(ks: f64, km: f64, beta: f64) -> Instance {
        let model = uniform_model(
            2,
            vec![vec![0.8, 0.2], vec![0.3, 0.7]],
            vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.3, 0.6]],
        );
        let mut inst = Instance::uniform("toy2", model, 3, 1, 2.0, 1.0, ks, km, beta, 10, 0);
        inst.s_range_override = Some((-12, 12));
        inst
    }

    fn single_location_instance(beta: f64) -> Instance {
        let model = uniform_model(
            1,
            vec![vec![0.8, 0.2], vec![0.3, 0.7]],
            vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.3, 0.6]],
        );
        let mut inst = Instance::uniform("toy1", model, 2, 1, 2.0, 1.0, 1.5, 1.5, beta, 10, 0);
        inst.s_range_override = Some((-12, 12));
        inst
    }

    fn state(f: &Fixture, inventory: Vec<i64>, modules: Vec<usize>) -> SystemState {
        let pi = crate::instances::stationary(&f.instance).unwrap();
        SystemState {
            belief: pi,
            inventory,
            modules,
        }
    }

    /// Every feasible action of a small instance, for brute-force oracles.
    fn enumerate_actions(instance: &Instance, state: &SystemState) -> Vec<Action> {
        fn rec_ds(
            instance: &Instance,
            state: &SystemState,
            bounds: &[(i64, i64)],
            l: usize,
            ds: &mut Vec<i64>,
            actions: &mut Vec<Action>,
        ) {
            if l == instance.locations {
                if ds.iter().sum::<i64>() != 0 {
                    return;
                }
                let mut u = vec![0usize; instance.locations];
                rec_u(
                    instance,
                    state,
                    ds,
                    0,
                    instance.total_modules,
                    &mut u,
                    actions,
                );
                return;
            }
            for v in bounds[l].0..=bounds[l].1 {
                ds[l] = v;
                rec_ds(instance, state, bounds, l + 1, ds, actions);
            }
            ds[l] = 0;
        }
        fn rec_u(
            instance: &Instance,
            state: &SystemState,
            ds: &[i64],
            l: usize,
            left: usize,
            u: &mut Vec<usize>,
            actions: &mut Vec<Action>,
        ) {
            if l == instance.locations {
                if left != 0 {
                    return;
                }
                let mut y = vec![0i64; instance.locations];
                rec_y(instance, state, ds, u, 0, &mut y, actions);
                return;
            }
            for v in 0..=instance.module_cap[l].min(left) {
                u[l] = v;
                rec_u(instance, state, ds, l + 1, left - v, u, actions);
            }
        }
        fn rec_y(
            instance: &Instance,
            state: &SystemState,
            ds: &[i64],
            u: &[usize],
            l: usize,
            y: &mut Vec<i64>,
            actions: &mut Vec<Action>,
        ) {
            if l == instance.locations {
                actions.push(Action {
                    transship: ds.to_vec(),
                    modules_after: u.to_vec(),
                    order_up_to: y.to_vec(),
                });
                return;
            }
            let post = state.inventory[l] + ds[l];
            for v in post..=post + instance.capacity(l, u[l]) {
                y[l] = v;
                rec_y(instance, state, ds, u, l + 1, y, actions);
            }
        }
        let bounds = transship_bounds(state);
        let mut actions = Vec::new();
        let mut ds = vec![0i64; instance.locations];
        rec_ds(instance, state, &bounds, 0, &mut ds, &mut actions);
        actions
    }

    #[test]
    fn mp_stays_put_when_moves_are_priced_out_and_demand_is_zero() {
        let model = ModulationModel {
            transition: vec![vec![1.0]],
            demand: (0..2)
                .map(|_| LocationDemand {
                    outcomes: vec![0],
                    pmf: vec![vec![1.0]],
                })
                .collect(),
            aod: None,
        };
        let mut inst = Instance::uniform("z", model, 2, 1, 2.0, 1.0, 10000.0, 10000.0, 0.9, 5, 0);
        inst.s_range_override = Some((-6, 6));
        let f = build_fixture(inst, 0.2);
        let c = ctx(&f, 0.2);
        let st = state(&f, vec![0, 0], vec![1, 1]);
        let a = act_mp(&c, &st).unwrap();
        assert_eq!(a, Action::stay(&st));
    }

    #[test]
    fn mp_single_location_is_capacitated_newsvendor() {
        let f = build_fixture(single_location_instance(0.9), 0.2);
        let c = ctx(&f, 0.2);
        for s in [-4i64, -1, 0, 2] {
            let st = state(&f, vec![s], vec![2]);
            let a = act_mp(&c, &st).unwrap();
            assert_eq!(a.transship, vec![0]);
            assert_eq!(a.modules_after, vec![2]);
            let w = scenario_weights(&f.instance, &st.belief);
            let mut best = (s, f64::INFINITY);
            for y in s..=s + f.instance.capacity(0, 2) {
                let cost: f64 = f.instance.model.demand[0]
                    .outcomes
                    .iter()
                    .enumerate()
                    .map(|(n, &d)| w[0][n] * one_period_cost(2.0, 1.0, y, d))
                    .sum();
                if cost < best.1 - 1e-12 {
                    best = (y, cost);
                }
            }
            assert_eq!(a.order_up_to[0], best.0);
        }
    }

    #[test]
    fn mp_matches_brute_force_on_two_locations() {
        let f = build_fixture(two_location_instance(1.5, 1.5, 0.9), 0.2);
        let c = ctx(&f, 0.2);
        for (inv, modules) in [
            (vec![2, -2], vec![2, 1]),
            (vec![0, 0], vec![3, 0]),
            (vec![-1, 2], vec![1, 2]),
        ] {
            let st = state(&f, inv, modules);
            let a = act_mp(&c, &st).unwrap();
            let got = mp_objective(&c, &st, &a);
            let best = enumerate_actions(&f.instance, &st)
                .iter()
                .map(|x| mp_objective(&c, &st, x))
                .fold(f64::INFINITY, f64::min);
            assert!(
                (got - best).abs() <= 1e-7,
                "MP objective {got} vs brute force {best}"
            );
        }
    }

    #[test]
    fn mnf_order_up_to_clamps() {
        let f = build_fixture(single_location_instance(0.9), 0.0);
        let c = ctx(&f, 0.0);
        let pi = crate::instances::stationary(&f.instance).unwrap();
        let target = myopic_base_stock(&f.instance, 0, &pi);
        assert!(target >= 1);
        // Plenty of stock: no order.
        let st = state(&f, vec![target + 3], vec![2]);
        let a = act_mnf(&c, &st).unwrap();
        assert_eq!(a.order_up_to[0], target + 3);
        // Deep backlog with binding capacity: order the full window.
        let st = state(&f, vec![-9], vec![0]);
        let a = act_mnf(&c, &st).unwrap();
        assert_eq!(a.order_up_to[0], -9 + f.instance.capacity(0, 0));
        // Reachable target.
        let st = state(&f, vec![0], vec![2]);
        let a = act_mnf(&c, &st).unwrap();
        assert_eq!(a.order_up_to[0], target);
    }

    #[test]
    fn dnf_zero_discount_matches_mp_without_moves() {
        let mut inst = two_location_instance(10000.0, 10000.0, 0.9);
        inst.discount = 1e-12;
        let f = build_fixture(inst, 0.2);
        let c = ctx(&f, 0.2);
        let st = state(&f, vec![1, -2], vec![2, 1]);
        let dnf = act_dnf(&c, &st).unwrap();
        let mp = act_mp(&c, &st).unwrap();
        assert_eq!(dnf.order_up_to, mp.order_up_to);
    }

    #[test]
    fn dnf_orders_nothing_for_zero_demand() {
        let model = ModulationModel {
            transition: vec![vec![1.0]],
            demand: (0..2)
                .map(|_| LocationDemand {
                    outcomes: vec![0],
                    pmf: vec![vec![1.0]],
                })
                .collect(),
            aod: None,
        };
        let mut inst = Instance::uniform("z2", model, 2, 1, 2.0, 1.0, 1.0, 1.0, 0.9, 5, 0);
        inst.s_range_override = Some((-6, 6));
        let f = build_fixture(inst, 0.2);
        let c = ctx(&f, 0.2);
        let st = state(&f, vec![0, 0], vec![1, 1]);
        let a = act_dnf(&c, &st).unwrap();
        assert_eq!(a.order_up_to, vec![0, 0]);
    }

    #[test]
    fn dnf_single_location_matches_window_enumeration() {
        let f = build_fixture(single_location_instance(0.9), 0.2);
        let c = ctx(&f, 0.2);
        let st = state(&f, vec![-2], vec![1]);
        let a = act_dnf(&c, &st).unwrap();
        let weights = scenario_weights(&f.instance, &st.belief);
        let gps = posterior_grid_indices(&c, &st.belief);
        let mut best = (i64::MIN, f64::INFINITY);
        for y in -2..=-2 + f.instance.capacity(0, 1) {
            let cost = local_stage_cost(&c, 0, &weights[0], &gps[0], 1, y);
            if cost < best.1 - 1e-12 {
                best = (y, cost);
            }
        }
        assert_eq!(a.order_up_to[0], best.0);
    }

    #[test]
    fn jr_equals_dnf_when_moves_are_priced_out() {
        let f = build_fixture(two_location_instance(10000.0, 10000.0, 0.9), 0.2);
        let c = ctx(&f, 0.2);
        for (inv, modules) in [(vec![3, -1], vec![2, 1]), (vec![0, 5], vec![0, 3])] {
            let st = state(&f, inv, modules);
            let jr = act_jr(&c, &st).unwrap();
            let dnf = act_dnf(&c, &st).unwrap();
            assert_eq!(jr, dnf);
        }
    }

    #[test]
    fn jr_single_location_equals_dnf() {
        let f = build_fixture(single_location_instance(0.9), 0.2);
        let c = ctx(&f, 0.2);
        let st = state(&f, vec![-3], vec![2]);
        assert_eq!(act_jr(&c, &st).unwrap(), act_dnf(&c, &st).unwrap());
    }

    #[test]
    fn jr_matches_brute_force_on_two_locations() {
        let f = build_fixture(two_location_instance(1.5, 1.5, 0.9), 0.2);
        let c = ctx(&f, 0.2);
        for (inv, modules) in [
            (vec![2, -2], vec![2, 1]),
            (vec![0, 1], vec![3, 0]),
            (vec![-1, -1], vec![1, 2]),
        ] {
            let st = state(&f, inv, modules);
            let a = act_jr(&c, &st).unwrap();
            let got = jr_objective(&c, &st, &a);
            let best = enumerate_actions(&f.instance, &st)
                .iter()
                .map(|x| jr_objective(&c, &st, x))
                .fold(f64::INFINITY, f64::min);
            assert!(
                (got - best).abs() <= 1e-7,
                "JR objective {got} vs brute force {best}"
            );
        }
    }

    #[test]
    fn glr_single_location_stays_and_replenishes() {
        let f = build_fixture(single_location_instance(0.9), 0.2);
        let c = ctx(&f, 0.2);
        let st = state(&f, vec![-2], vec![2]);
        let a = act_glr(&c, &st).unwrap();
        assert_eq!(a.transship, vec![0]);
        assert_eq!(a.modules_after, vec![2]);
        assert_eq!(
            a.order_up_to[0],
            local_order_up_to(&f.instance, 0, &st.belief, -2, 2)
        );
    }

    #[test]
    fn glr_symmetric_state_is_deterministic_and_stays() {
        // Symmetric locations, symmetric state, even module split: no move
        // can pay for itself, and repeated calls agree.
        let mut inst = two_location_instance(1.5, 1.5, 0.9);
        inst.total_modules = 2;
        let f = build_fixture(inst, 0.2);
        let c = ctx(&f, 0.2);
        let st = state(&f, vec![1, 1], vec![1, 1]);
        let a = act_glr(&c, &st).unwrap();
        let b = act_glr(&c, &st).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.transship, vec![0, 0]);
        assert_eq!(a.modules_after, vec![1, 1]);
    }

    #[test]
    fn glr_step_one_matches_brute_force() {
        let f = build_fixture(two_location_instance(1.5, 1.5, 0.9), 0.2);
        let c = ctx(&f, 0.2);
        let st = state(&f, vec![2, -1], vec![2, 1]);
        let gp = f.grid.nearest(&st.belief);
        let a = act_glr(&c, &st).unwrap();
        let got: f64 = (0..2)
            .map(|l| {
                glr_option_cost(
                    &c,
                    &st,
                    gp,
                    l,
                    a.transship[l],
                    a.modules_after[l] as i64 - st.modules[l] as i64,
                )
            })
            .sum();
        let bounds = transship_bounds(&st);
        let mut best = f64::INFINITY;
        for ds0 in bounds[0].0..=bounds[0].1 {
            let ds1 = -ds0;
            if ds1 < bounds[1].0 || ds1 > bounds[1].1 {
                continue;
            }
            for u0 in 0..=f.instance.total_modules {
                let u1 = f.instance.total_modules - u0;
                if u0 > f.instance.module_cap[0] || u1 > f.instance.module_cap[1] {
                    continue;
                }
                let dm0 = u0 as i64 - st.modules[0] as i64;
                let dm1 = u1 as i64 - st.modules[1] as i64;
                let cost = glr_option_cost(&c, &st, gp, 0, ds0, dm0)
                    + glr_option_cost(&c, &st, gp, 1, ds1, dm1);
                best = best.min(cost);
            }
        }
        assert!((got - best).abs() <= 1e-7, "GLR step 1 {got} vs {best}");
    }

    #[test]
    fn laj_unit_modules_solves_as_integral_lp() {
        let f = build_fixture(two_location_instance(1.5, 1.5, 0.9), 0.2);
        let c = ctx(&f, 0.2);
        for (inv, modules) in [
            (vec![2, -2], vec![2, 1]),
            (vec![0, 0], vec![3, 0]),
            (vec![-3, 4], vec![1, 2]),
        ] {
            let st = state(&f, inv, modules);
            let (a, diag) = act_laj(&c, &st).unwrap();
            assert!(diag.solved_as_lp);
            assert!(diag.max_integrality_gap <= INTEGRALITY_TOL);
            a.validate(&f.instance, &st).unwrap();
        }
    }

    #[test]
    fn laj_matches_brute_force_objective() {
        let f = build_fixture(two_location_instance(1.5, 1.5, 0.9), 0.2);
        let c = ctx(&f, 0.2);
        let st = state(&f, vec![1, -1], vec![2, 1]);
        let (a, _) = act_laj(&c, &st).unwrap();
        let got = laj_objective(&c, &st, &a);
        let best = enumerate_actions(&f.instance, &st)
            .iter()
            .map(|x| laj_objective(&c, &st, x))
            .fold(f64::INFINITY, f64::min);
        assert!((got - best).abs() <= 1e-7, "LAJ {got} vs brute force {best}");
    }

    #[test]
    fn laj_priced_out_moves_reduce_to_replenishment() {
        let f = build_fixture(two_location_instance(10000.0, 10000.0, 0.9), 0.2);
        let c = ctx(&f, 0.2);
        let st = state(&f, vec![2, -2], vec![2, 1]);
        let (a, _) = act_laj(&c, &st).unwrap();
        assert_eq!(a.transship, vec![0, 0]);
        assert_eq!(a.modules_after, st.modules);
    }

    #[test]
    fn laj_with_wide_modules_matches_mip_oracle() {
        // Module capacity two forces the branch-and-bound path; the returned
        // objective must match the best enumerated action.
        let model = uniform_model(
            2,
            vec![vec![0.8, 0.2], vec![0.3, 0.7]],
            vec![vec![0.5, 0.2, 0.1, 0.1, 0.1], vec![0.1, 0.1, 0.1, 0.2, 0.5]],
        );
        let mut inst = Instance::uniform("g2", model, 2, 2, 2.0, 1.0, 1.5, 1.5, 0.9, 10, 0);
        inst.s_range_override = Some((-10, 10));
        let f = build_fixture(inst, 0.2);
        let c = ctx(&f, 0.2);
        let st = state(&f, vec![1, -1], vec![1, 1]);
        let (a, diag) = act_laj(&c, &st).unwrap();
        assert!(!diag.solved_as_lp);
        let got = laj_objective(&c, &st, &a);
        let best = enumerate_actions(&f.instance, &st)
            .iter()
            .map(|x| laj_objective(&c, &st, x))
            .fold(f64::INFINITY, f64::min);
        assert!((got - best).abs() <= 1e-7, "LAJ(G=2) {got} vs {best}");
    }

    #[test]
    fn laglr_relocation_matches_brute_force() {
        let f = build_fixture(two_location_instance(1.5, 1.5, 0.9), 0.2);
        let c = ctx(&f, 0.2);
        let st = state(&f, vec![2, -1], vec![2, 1]);
        let a = act_laglr(&c, &st).unwrap();
        let got = laglr_objective(&c, &st, &a);
        let mut best = f64::INFINITY;
        for x in enumerate_actions(&f.instance, &st) {
            best = best.min(laglr_objective(&c, &st, &x));
        }
        assert!((got - best).abs() <= 1e-7, "LAGLR {got} vs {best}");
    }

    #[test]
    fn laglr_single_location_stays_and_replenishes() {
        let f = build_fixture(single_location_instance(0.9), 0.2);
        let c = ctx(&f, 0.2);
        let st = state(&f, vec![-3], vec![2]);
        let a = act_laglr(&c, &st).unwrap();
        assert_eq!(a.transship, vec![0]);
        assert_eq!(a.modules_after, vec![2]);
        assert_eq!(
            a.order_up_to[0],
            local_order_up_to(&f.instance, 0, &st.belief, -3, 2)
        );
    }

    #[test]
    fn laglr_three_locations_matches_enumeration() {
        let model = uniform_model(
            3,
            vec![vec![0.8, 0.2], vec![0.3, 0.7]],
            vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.3, 0.6]],
        );
        let mut inst = Instance::uniform("toy3", model, 4, 1, 2.0, 1.0, 1.5, 1.5, 0.9, 10, 0);
        inst.s_range_override = Some((-10, 10));
        let f = build_fixture(inst, 0.2);
        let c = ctx(&f, 0.2);
        let st = state(&f, vec![2, -1, 0], vec![2, 1, 1]);
        let a = act_laglr(&c, &st).unwrap();
        let got = laglr_objective(&c, &st, &a);
        let best = enumerate_actions(&f.instance, &st)
            .iter()
            .map(|x| laglr_objective(&c, &st, x))
            .fold(f64::INFINITY, f64::min);
        assert!((got - best).abs() <= 1e-7, "LAGLR(L=3) {got} vs {best}");
    }

    #[test]
    fn laglr_priced_out_moves_stay_put() {
        let f = build_fixture(two_location_instance(10000.0, 10000.0, 0.9), 0.2);
        let c = ctx(&f, 0.2);
        let st = state(&f, vec![2, -2], vec![2, 1]);
        let a = act_laglr(&c, &st).unwrap();
        assert_eq!(a.transship, vec![0, 0]);
        assert_eq!(a.modules_after, st.modules);
        for l in 0..2 {
            assert_eq!(
                a.order_up_to[l],
                local_order_up_to(&f.instance, l, &st.belief, st.inventory[l], st.modules[l])
            );
        }
    }

    #[test]
    fn theta_is_irrelevant_when_caps_pin_the_modules() {
        // With per-location caps equal to the current counts, no module can
        // move and both blend arms see the same capacity, so theta = 0 and
        // theta = 1 agree.
        let mut inst = two_location_instance(1.5, 1.5, 0.9);
        inst.module_cap = vec![2, 1];
        let f0 = build_fixture(inst.clone(), 0.0);
        let f1 = build_fixture(inst, 1.0);
        let c0 = ctx(&f0, 0.0);
        let c1 = ctx(&f1, 1.0);
        let st0 = state(&f0, vec![1, -1], vec![2, 1]);
        let st1 = state(&f1, vec![1, -1], vec![2, 1]);
        assert_eq!(act_jr(&c0, &st0).unwrap(), act_jr(&c1, &st1).unwrap());
        assert_eq!(act_glr(&c0, &st0).unwrap(), act_glr(&c1, &st1).unwrap());
    }

    #[test]
    fn policy_config_warns_on_ignored_theta() {
        let cfg = PolicyConfig {
            policy: PolicyId::Mp,
            theta: BlendSpec::new(0.2).unwrap(),
            mode: BeliefMode::Po,
        };
        assert_eq!(cfg.warnings().len(), 1);
        let cfg = PolicyConfig {
            policy: PolicyId::Laj,
            theta: BlendSpec::new(0.2).unwrap(),
            mode: BeliefMode::Po,
        };
        assert!(cfg.warnings().is_empty());
    }

    #[test]
    fn fuzzed_states_yield_valid_actions_for_every_policy() {
        use rand::Rng;
        use rand::SeedableRng;
        let f = build_fixture(two_location_instance(1.5, 1.5, 0.9), 0.2);
        let c = ctx(&f, 0.2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..300 {
            let raw: Vec<f64> = (0..2).map(|_| rng.random_range(0.01..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            let belief = Belief::new(raw.into_iter().map(|v| v / sum).collect()).unwrap();
            let u0 = rng.random_range(0..=3usize);
            let st = SystemState {
                belief,
                inventory: vec![rng.random_range(-8..=8), rng.random_range(-8..=8)],
                modules: vec![u0, 3 - u0],
            };
            st.validate(&f.instance).unwrap();
            for policy in PolicyId::ALL {
                let a = act(policy, &c, &st)
                    .unwrap_or_else(|e| panic!("{policy} failed on {st:?}: {e}"));
                a.validate(&f.instance, &st)
                    .unwrap_or_else(|e| panic!("{policy} invalid action on {st:?}: {e}"));
            }
        }
    }
}
