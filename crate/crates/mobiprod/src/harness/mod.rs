//! Seeded Monte Carlo rollout engine and experiment reporting.
//!
//! A trajectory is driven by a presampled modulation/demand path, so the
//! same path can be replayed under every policy (common random numbers):
//! the path depends only on (instance, trajectory index, master seed). Value
//! tables are built once per instance and can be cached to disk keyed by the
//! instance hash, grid resolution, and discount factor.

pub mod oracle;

use crate::instances::{derive_seed, stationary, Instance, InstanceError};
use crate::modulation::{belief_grid, posterior, Belief, BeliefGrid};
use crate::policies::{
    act, Action, BeliefMode, PolicyConfig, PolicyContext, PolicyError, PolicyId, SystemState,
};
use crate::sl_value::{
    extract_facets, static_value_iteration, FacetSet, SlValueConfig, SlValueError, ValueTable,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Value(#[from] SlValueError),
    #[error("trajectory aborted: {0}")]
    Policy(#[from] PolicyError),
    #[error("oracle state space too large: {states} states (cap {cap})")]
    SizeExceeded { states: usize, cap: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("cache decode error: {0}")]
    Cache(String),
    #[error("{0}")]
    Invalid(String),
}

/// Cache-file tag; bump when the table layout changes.
pub const TABLE_CACHE_VERSION: &str = "mobiprod-tables/1";

/// Belief grid plus one value table per location, everything a policy needs
/// apart from facets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyArtifacts {
    pub grid: BeliefGrid,
    pub tables: Vec<ValueTable>,
}

/// Build all single-location tables on the lattice grid (plus stationary
/// point) at the given resolution.
pub fn build_tables(
    instance: &Instance,
    resolution: u32,
    cfg: &SlValueConfig,
) -> Result<PolicyArtifacts, HarnessError> {
    let pi = stationary(instance)?;
    let grid = belief_grid(instance.model.n_states(), resolution, Some(&pi));
    let tables = (0..instance.locations)
        .map(|l| static_value_iteration(instance, l, &grid, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PolicyArtifacts { grid, tables })
}

#[derive(Serialize, Deserialize)]
struct TableCacheFile {
    version: String,
    instance_hash: String,
    resolution: u32,
    discount: f64,
    artifacts: PolicyArtifacts,
}

/// Cache file name for an instance/resolution pair.
pub fn table_cache_name(instance: &Instance, resolution: u32) -> String {
    format!(
        "{}-r{}-b{}.vtab",
        &instance.hash_hex()[..16],
        resolution,
        instance.discount
    )
}

pub fn save_tables(
    path: &std::path::Path,
    instance: &Instance,
    resolution: u32,
    artifacts: &PolicyArtifacts,
) -> Result<(), HarnessError> {
    let file = TableCacheFile {
        version: TABLE_CACHE_VERSION.into(),
        instance_hash: instance.hash_hex(),
        resolution,
        discount: instance.discount,
        artifacts: artifacts.clone(),
    };
    let bytes = bincode::serialize(&file).map_err(|e| HarnessError::Cache(e.to_string()))?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_tables(
    path: &std::path::Path,
    instance: &Instance,
    resolution: u32,
) -> Result<PolicyArtifacts, HarnessError> {
    let bytes = std::fs::read(path)?;
    let file: TableCacheFile =
        bincode::deserialize(&bytes).map_err(|e| HarnessError::Cache(e.to_string()))?;
    if file.version != TABLE_CACHE_VERSION {
        return Err(HarnessError::Cache(format!(
            "version {:?} (expected {TABLE_CACHE_VERSION:?})",
            file.version
        )));
    }
    if file.instance_hash != instance.hash_hex() || file.resolution != resolution {
        return Err(HarnessError::Cache("cache key mismatch".into()));
    }
    Ok(file.artifacts)
}

/// Build tables or load them from the cache directory; a hit skips the DP.
pub fn build_or_load_tables(
    instance: &Instance,
    resolution: u32,
    cfg: &SlValueConfig,
    cache_dir: Option<&std::path::Path>,
) -> Result<PolicyArtifacts, HarnessError> {
    if let Some(dir) = cache_dir {
        let path = dir.join(table_cache_name(instance, resolution));
        if path.exists() {
            if let Ok(artifacts) = load_tables(&path, instance, resolution) {
                return Ok(artifacts);
            }
        }
        let artifacts = build_tables(instance, resolution, cfg)?;
        std::fs::create_dir_all(dir)?;
        save_tables(&path, instance, resolution, &artifacts)?;
        Ok(artifacts)
    } else {
        build_tables(instance, resolution, cfg)
    }
}

/// Module allocation minimizing the summed stationary-belief table values at
/// zero inventory, by exact DP over locations. Cost ties place spare modules
/// at the lowest-indexed locations.
pub fn initial_module_config(
    instance: &Instance,
    artifacts: &PolicyArtifacts,
) -> Result<Vec<usize>, HarnessError> {
    let pi = stationary(instance)?;
    let gp = artifacts.grid.nearest(&pi);
    let l_count = instance.locations;
    let y_total = instance.total_modules;
    // suffix[l][y] = cheapest allocation of y modules to locations l..L.
    let mut suffix = vec![vec![f64::INFINITY; y_total + 1]; l_count + 1];
    suffix[l_count][0] = 0.0;
    for l in (0..l_count).rev() {
        for y in 0..=y_total {
            let mut best = f64::INFINITY;
            for u in 0..=instance.module_cap[l].min(y) {
                let tail = suffix[l + 1][y - u];
                if tail.is_finite() {
                    let c = artifacts.tables[l].value(gp, u, 0) + tail;
                    if c < best {
                        best = c;
                    }
                }
            }
            suffix[l][y] = best;
        }
    }
    if !suffix[0][y_total].is_finite() {
        return Err(HarnessError::Invalid(
            "module caps cannot hold the fleet".into(),
        ));
    }
    let mut alloc = Vec::with_capacity(l_count);
    let mut left = y_total;
    for l in 0..l_count {
        let target = suffix[l][left];
        let mut pick = 0usize;
        // Prefer the largest count achieving the optimum.
        for u in (0..=instance.module_cap[l].min(left)).rev() {
            let tail = suffix[l + 1][left - u];
            if tail.is_finite() && artifacts.tables[l].value(gp, u, 0) + tail == target {
                pick = u;
                break;
            }
        }
        alloc.push(pick);
        left -= pick;
    }
    Ok(alloc)
}

/// Exogenous randomness of one trajectory: the modulation path and the
/// demand realizations, all drawn before any policy acts.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    /// Modulation state at time zero (drawn from the stationary law).
    pub initial_state: usize,
    /// Modulation state governing period t's demand, for t = 0..T-1.
    pub states: Vec<usize>,
    /// Demand vector realized in period t.
    pub demands: Vec<Vec<i64>>,
    pub seed: u64,
}

fn sample_categorical(rng: &mut ChaCha8Rng, pmf: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in pmf.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    pmf.len() - 1
}

/// Draw a complete modulation/demand path of the given length.
pub fn sample_path(
    instance: &Instance,
    horizon: usize,
    seed: u64,
) -> Result<SamplePath, HarnessError> {
    let pi = stationary(instance)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = sample_categorical(&mut rng, pi.as_slice());
    let initial_state = current;
    let mut states = Vec::with_capacity(horizon);
    let mut demands = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let next = sample_categorical(&mut rng, &instance.model.transition[current]);
        let d: Vec<i64> = (0..instance.locations)
            .map(|l| {
                let loc = &instance.model.demand[l];
                let idx = sample_categorical(&mut rng, &loc.pmf[next]);
                loc.outcomes[idx]
            })
            .collect();
        states.push(next);
        demands.push(d);
        current = next;
    }
    Ok(SamplePath {
        initial_state,
        states,
        demands,
        seed,
    })
}

/// Cost components of one period, undiscounted.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct PeriodCost {
    pub holding: f64,
    pub backorder: f64,
    pub transship: f64,
    pub module_move: f64,
}

impl PeriodCost {
    pub fn total(&self) -> f64 {
        self.holding + self.backorder + self.transship + self.module_move
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryResult {
    pub discounted_total: f64,
    pub undiscounted_total: f64,
    pub periods: Vec<PeriodCost>,
    pub actions: Vec<Action>,
    pub demands: Vec<Vec<i64>>,
    pub modulation_path: Vec<usize>,
    pub seed: u64,
}

impl TrajectoryResult {
    /// Gap between the reported discounted total and the recomputed sum of
    /// discounted period components.
    pub fn accounting_residual(&self, beta: f64) -> f64 {
        let mut total = 0.0;
        let mut disc = 1.0;
        for p in &self.periods {
            total += disc * p.total();
            disc *= beta;
        }
        (total - self.discounted_total).abs()
    }
}

/// Roll one policy over one presampled path, starting from zero inventory
/// and the supplied module configuration.
pub fn simulate_trajectory(
    ctx: &PolicyContext,
    config: &PolicyConfig,
    initial_modules: &[usize],
    path: &SamplePath,
) -> Result<TrajectoryResult, HarnessError> {
    let inst = ctx.instance;
    let pi = stationary(inst)?;
    let n_states = inst.model.n_states();
    let initial_belief = match config.mode {
        BeliefMode::Po | BeliefMode::Ss => pi.clone(),
        BeliefMode::Co => Belief::degenerate(n_states, path.initial_state),
    };
    let mut state = SystemState {
        belief: initial_belief,
        inventory: vec![0; inst.locations],
        modules: initial_modules.to_vec(),
    };
    let horizon = path.demands.len();
    let mut periods = Vec::with_capacity(horizon);
    let mut actions = Vec::with_capacity(horizon);
    let mut discounted_total = 0.0;
    let mut undiscounted_total = 0.0;
    let mut discount = 1.0;
    for t in 0..horizon {
        let action = act(config.policy, ctx, &state)?;
        action.validate(inst, &state)?;
        let demand = &path.demands[t];
        let mut cost = PeriodCost::default();
        let mut moved_modules = 0i64;
        for l in 0..inst.locations {
            let ds = action.transship[l];
            if ds > 0 {
                cost.transship += inst.transship_in_cost[l] * ds as f64;
            } else {
                cost.transship += inst.transship_out_cost[l] * (-ds) as f64;
            }
            moved_modules +=
                (action.modules_after[l] as i64 - state.modules[l] as i64).abs();
            let y = action.order_up_to[l];
            let d = demand[l];
            if y >= d {
                cost.holding += inst.holding_cost[l] * (y - d) as f64;
            } else {
                cost.backorder += inst.backorder_cost[l] * (d - y) as f64;
            }
        }
        cost.module_move = inst.module_move_cost * moved_modules as f64 / 2.0;
        discounted_total += discount * cost.total();
        undiscounted_total += cost.total();
        discount *= inst.discount;

        // Advance inventory, modules, and the belief for the next epoch.
        for l in 0..inst.locations {
            state.inventory[l] = action.order_up_to[l] - demand[l];
        }
        state.modules = action.modules_after.clone();
        state.belief = match config.mode {
            BeliefMode::Ss => pi.clone(),
            BeliefMode::Co => Belief::degenerate(n_states, path.states[t]),
            BeliefMode::Po => posterior(&inst.model, demand, None, &state.belief)
                .map_err(|e| HarnessError::Invalid(format!("belief update failed: {e}")))?,
        };
        periods.push(cost);
        actions.push(action);
    }
    Ok(TrajectoryResult {
        discounted_total,
        undiscounted_total,
        periods,
        actions,
        demands: path.demands.clone(),
        modulation_path: path.states.clone(),
        seed: path.seed,
    })
}

/// Percent savings of a policy cost against the benchmark cost; `None` when
/// the benchmark is zero.
pub fn savings(cost_policy: f64, cost_dnf: f64) -> Option<f64> {
    if cost_dnf == 0.0 {
        None
    } else {
        Some(100.0 * (cost_dnf - cost_policy) / cost_dnf.abs())
    }
}

/// One aggregated line of an experiment report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub instance_id: String,
    pub policy: PolicyId,
    pub theta: f64,
    pub mode: BeliefMode,
    pub mean_cost: f64,
    pub savings_vs_dnf_pct: Option<f64>,
    pub sec_per_trajectory: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

pub const REPORT_HEADER: &str =
    "instance_id,policy,theta,mode,mean_cost,savings_vs_dnf_pct,sec_per_trajectory";

impl ExperimentReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            let savings = r
                .savings_vs_dnf_pct
                .map(|s| format!("{s:.4}"))
                .unwrap_or_else(|| "NA".into());
            out.push_str(&format!(
                "{},{},{},{},{:.6},{},{:.6}\n",
                r.instance_id,
                r.policy,
                r.theta,
                r.mode.as_str(),
                r.mean_cost,
                savings,
                r.sec_per_trajectory
            ));
        }
        out
    }

    pub fn row(
        &self,
        instance_id: &str,
        policy: PolicyId,
        theta: f64,
        mode: BeliefMode,
    ) -> Option<&ReportRow> {
        self.rows.iter().find(|r| {
            r.instance_id == instance_id
                && r.policy == policy
                && r.theta == theta
                && r.mode == mode
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ExperimentConfig {
    pub reps: usize,
    pub horizon: usize,
    pub master_seed: u64,
    pub grid_resolution: u32,
    /// When false, timing columns are written as zero so reports are
    /// byte-reproducible.
    pub include_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            reps: 50,
            horizon: 30,
            master_seed: 0,
            grid_resolution: 3,
            include_timing: true,
        }
    }
}

/// Per-trajectory seed: a deterministic function of the master seed, the
/// instance, and the trajectory index — never of the policy.
pub fn trajectory_seed(master_seed: u64, instance: &Instance, trajectory: usize) -> u64 {
    derive_seed(master_seed, &[instance.hash64(), trajectory as u64])
}

/// Run every (instance, policy) pair over common random paths and aggregate.
/// A benchmark run is added automatically for any (theta, mode) combination
/// that lacks one, so savings are always defined.
pub fn run_experiment(
    instances: &[Instance],
    policies: &[PolicyConfig],
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport, HarnessError> {
    let mut configs: Vec<PolicyConfig> = Vec::new();
    for c in policies {
        if !configs.contains(c) {
            configs.push(*c);
        }
    }
    let mut benchmarks: Vec<PolicyConfig> = Vec::new();
    for c in &configs {
        let bench = PolicyConfig {
            policy: PolicyId::Dnf,
            ..*c
        };
        if !configs.contains(&bench) && !benchmarks.contains(&bench) {
            benchmarks.push(bench);
        }
    }
    let all_configs: Vec<PolicyConfig> = configs.iter().chain(&benchmarks).copied().collect();

    // Tables are shared between instances that differ only in movement costs.
    let mut table_memo: BTreeMap<String, Arc<PolicyArtifacts>> = BTreeMap::new();
    let mut report = ExperimentReport::default();
    for instance in instances {
        let artifacts = match table_memo.get(&instance.table_hash_hex()) {
            Some(a) => a.clone(),
            None => {
                let a = Arc::new(build_tables(
                    instance,
                    cfg.grid_resolution,
                    &SlValueConfig::default(),
                )?);
                table_memo.insert(instance.table_hash_hex(), a.clone());
                a
            }
        };
        let initial = initial_module_config(instance, &artifacts)?;
        let paths: Vec<SamplePath> = (0..cfg.reps)
            .map(|r| sample_path(instance, cfg.horizon, trajectory_seed(cfg.master_seed, instance, r)))
            .collect::<Result<_, _>>()?;

        // Facets per blend actually used.
        let mut facet_memo: BTreeMap<u64, Arc<Vec<FacetSet>>> = BTreeMap::new();
        for c in &all_configs {
            if c.policy.needs_facets() {
                let key = c.theta.theta().to_bits();
                if let std::collections::btree_map::Entry::Vacant(slot) = facet_memo.entry(key) {
                    let sets = artifacts
                        .tables
                        .iter()
                        .map(|t| extract_facets(t, c.theta))
                        .collect::<Result<Vec<_>, _>>()?;
                    slot.insert(Arc::new(sets));
                }
            }
        }

        let mut mean_costs: BTreeMap<(usize, u64, u8), f64> = BTreeMap::new();
        let mut rows_here = Vec::new();
        for c in &all_configs {
            let facets = if c.policy.needs_facets() {
                Some(facet_memo.get(&c.theta.theta().to_bits()).unwrap().clone())
            } else {
                None
            };
            let ctx = PolicyContext::new(
                instance,
                &artifacts.tables,
                facets.as_ref().map(|f| f.as_slice()),
                c.theta,
            );
            let started = std::time::Instant::now();
            let results: Vec<Result<TrajectoryResult, HarnessError>> = paths
                .par_iter()
                .map(|p| simulate_trajectory(&ctx, c, &initial, p))
                .collect();
            let elapsed = started.elapsed().as_secs_f64();
            let mut total = 0.0;
            for r in results {
                total += r?.discounted_total;
            }
            let mean_cost = total / cfg.reps.max(1) as f64;
            let mode_key = c.mode as u8;
            mean_costs.insert(
                (policy_index(c.policy), c.theta.theta().to_bits(), mode_key),
                mean_cost,
            );
            rows_here.push((*c, mean_cost, elapsed / cfg.reps.max(1) as f64));
        }
        for (c, mean_cost, sec) in rows_here {
            let dnf_cost = mean_costs
                .get(&(
                    policy_index(PolicyId::Dnf),
                    c.theta.theta().to_bits(),
                    c.mode as u8,
                ))
                .copied();
            let savings_pct = dnf_cost.and_then(|d| savings(mean_cost, d));
            report.rows.push(ReportRow {
                instance_id: instance.meta.id.clone(),
                policy: c.policy,
                theta: c.theta.theta(),
                mode: c.mode,
                mean_cost,
                savings_vs_dnf_pct: savings_pct,
                sec_per_trajectory: if cfg.include_timing { sec } else { 0.0 },
            });
        }
    }
    Ok(report)
}

fn policy_index(p: PolicyId) -> usize {
    PolicyId::ALL.iter().position(|&x| x == p).unwrap()
}

/// One line of the per-trajectory CSV emitted by the simulate subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub instance_id: String,
    pub policy: PolicyId,
    pub theta: f64,
    pub mode: BeliefMode,
    pub trajectory: usize,
    pub discounted_cost: f64,
    pub undiscounted_cost: f64,
    pub holding: f64,
    pub backorder: f64,
    pub transship: f64,
    pub module_move: f64,
    pub sec: f64,
}

pub const TRAJECTORY_HEADER: &str = "instance_id,policy,theta,mode,trajectory,discounted_cost,\
undiscounted_cost,holding,backorder,transship,module_move,sec";

pub fn trajectories_to_csv(records: &[TrajectoryRecord]) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.6}\n",
            r.instance_id,
            r.policy,
            r.theta,
            r.mode.as_str(),
            r.trajectory,
            r.discounted_cost,
            r.undiscounted_cost,
            r.holding,
            r.backorder,
            r.transship,
            r.module_move,
            r.sec
        ));
    }
    out
}

pub fn parse_trajectory_csv(text: &str) -> Result<Vec<TrajectoryRecord>, HarnessError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| HarnessError::Invalid("empty csv".into()))?;
    if header != TRAJECTORY_HEADER {
        return Err(HarnessError::Invalid(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 12 {
            return Err(HarnessError::Invalid(format!("bad record on line {}", ln + 2)));
        }
        let parse_f = |s: &str| -> Result<f64, HarnessError> {
            s.parse()
                .map_err(|_| HarnessError::Invalid(format!("bad number {s:?} on line {}", ln + 2)))
        };
        out.push(TrajectoryRecord {
            instance_id: parts[0].to_string(),
            policy: parts[1]
                .parse()
                .map_err(|e: String| HarnessError::Invalid(e))?,
            theta: parse_f(parts[2])?,
            mode: parts[3]
                .parse()
                .map_err(|e: String| HarnessError::Invalid(e))?,
            trajectory: parts[4]
                .parse()
                .map_err(|_| HarnessError::Invalid(format!("bad index on line {}", ln + 2)))?,
            discounted_cost: parse_f(parts[5])?,
            undiscounted_cost: parse_f(parts[6])?,
            holding: parse_f(parts[7])?,
            backorder: parse_f(parts[8])?,
            transship: parse_f(parts[9])?,
            module_move: parse_f(parts[10])?,
            sec: parse_f(parts[11])?,
        });
    }
    Ok(out)
}

/// Aggregate per-trajectory records into report rows (mean cost and timing,
/// savings against the matching benchmark group), sorted deterministically.
pub fn aggregate_records(records: &[TrajectoryRecord], include_timing: bool) -> ExperimentReport {
    type Key = (String, String, u64, u8);
    let mut groups: BTreeMap<Key, Vec<&TrajectoryRecord>> = BTreeMap::new();
    for r in records {
        let key = (
            r.instance_id.clone(),
            r.policy.to_string(),
            r.theta.to_bits(),
            r.mode as u8,
        );
        groups.entry(key).or_default().push(r);
    }
    let mean = |rs: &[&TrajectoryRecord]| -> (f64, f64) {
        let n = rs.len().max(1) as f64;
        (
            rs.iter().map(|r| r.discounted_cost).sum::<f64>() / n,
            rs.iter().map(|r| r.sec).sum::<f64>() / n,
        )
    };
    let mut report = ExperimentReport::default();
    for ((instance_id, _, theta_bits, mode), rs) in &groups {
        let (mean_cost, mean_sec) = mean(rs);
        let dnf_key = (
            instance_id.clone(),
            PolicyId::Dnf.to_string(),
            *theta_bits,
            *mode,
        );
        let savings_pct = groups
            .get(&dnf_key)
            .map(|d| mean(d).0)
            .and_then(|d| savings(mean_cost, d));
        report.rows.push(ReportRow {
            instance_id: instance_id.clone(),
            policy: rs[0].policy,
            theta: f64::from_bits(*theta_bits),
            mode: rs[0].mode,
            mean_cost,
            savings_vs_dnf_pct: savings_pct,
            sec_per_trajectory: if include_timing { mean_sec } else { 0.0 },
        });
    }
    report
}
