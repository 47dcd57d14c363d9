//! Brute-force finite-horizon value of the full joint problem on a tiny
//! state box, by exhaustive enumeration of actions and outcomes.
//!
//! The oracle applies the exact one-epoch operator: minimize movement cost
//! plus expected one-period cost plus the discounted value at the posterior
//! belief (snapped to the grid), next inventory (clamped to the box), and
//! post-move modules. It exists to cross-check the single-location tables
//! and the approximation-gap bounds; keep the box small.

use super::HarnessError;
use crate::instances::Instance;
use crate::modulation::{posterior, sigma, BeliefGrid};
use crate::sl_value::one_period_cost;

/// Box and horizon of an oracle run.
#[derive(Debug, Clone, Copy)]
pub struct OracleConfig {
    /// Inventory box per location.
    pub s_lo: i64,
    pub s_hi: i64,
    /// Number of operator applications from the zero function.
    pub steps: usize,
    /// Hard cap on the stored state count.
    pub max_states: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            s_lo: -2,
            s_hi: 2,
            steps: 3,
            max_states: 1_000_000,
        }
    }
}

/// Exact n-step value table over (grid point, inventory vector, module
/// vector).
#[derive(Debug, Clone)]
pub struct JointValueOracle {
    pub config: OracleConfig,
    pub grid: BeliefGrid,
    /// All module vectors summing to the fleet size within the caps.
    pub module_vectors: Vec<Vec<usize>>,
    values: Vec<f64>,
    n_s: usize,
    locations: usize,
    /// Error bound on the remaining horizon:
    /// `beta ||v_n - v_{n-1}||_inf / (1 - beta)`.
    pub horizon_slack: f64,
    /// Transitions that left the inventory box and were clamped. Zero means
    /// the box truncation cannot have influenced any stored value.
    pub clamp_events: u64,
}

impl JointValueOracle {
    fn s_index(&self, s: &[i64]) -> usize {
        let mut idx = 0usize;
        for &v in s {
            debug_assert!(v >= self.config.s_lo && v <= self.config.s_hi);
            idx = idx * self.n_s + (v - self.config.s_lo) as usize;
        }
        idx
    }

    pub fn module_index(&self, u: &[usize]) -> Option<usize> {
        self.module_vectors.iter().position(|v| v == u)
    }

    /// Stored value at (grid point, module vector index, inventory vector).
    pub fn value(&self, gp: usize, u_idx: usize, s: &[i64]) -> f64 {
        let per_gp = self.module_vectors.len() * self.n_s.pow(self.locations as u32);
        self.values[gp * per_gp + u_idx * self.n_s.pow(self.locations as u32) + self.s_index(s)]
    }

    /// Iterate over every inventory vector in the box.
    pub fn inventory_vectors(&self) -> Vec<Vec<i64>> {
        let mut out = vec![Vec::new()];
        for _ in 0..self.locations {
            let mut next = Vec::with_capacity(out.len() * self.n_s);
            for base in &out {
                for v in self.config.s_lo..=self.config.s_hi {
                    let mut s = base.clone();
                    s.push(v);
                    next.push(s);
                }
            }
            out = next;
        }
        out
    }
}

fn module_vectors(instance: &Instance) -> Vec<Vec<usize>> {
    fn rec(instance: &Instance, l: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if l == instance.locations {
            if left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        for u in 0..=instance.module_cap[l].min(left) {
            cur.push(u);
            rec(instance, l + 1, left - u, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(instance, 0, instance.total_modules, &mut Vec::new(), &mut out);
    out
}

struct Outcome {
    weight: f64,
    next_gp: usize,
    demand: Vec<i64>,
}

/// Run `steps` applications of the exact operator on the box.
pub fn joint_value_oracle(
    instance: &Instance,
    grid: &BeliefGrid,
    config: OracleConfig,
) -> Result<JointValueOracle, HarnessError> {
    let l_count = instance.locations;
    let n_s = (config.s_hi - config.s_lo + 1) as usize;
    let u_vecs = module_vectors(instance);
    let per_gp = u_vecs.len() * n_s.pow(l_count as u32);
    let states = grid.len() * per_gp;
    if states > config.max_states {
        return Err(HarnessError::SizeExceeded {
            states,
            cap: config.max_states,
        });
    }

    // Posterior transitions per grid point, over all joint observations.
    let joint = instance.model.joint_outcomes();
    let outcome_table: Vec<Vec<Outcome>> = grid
        .points()
        .iter()
        .map(|x| {
            joint
                .iter()
                .filter_map(|(d, z)| {
                    let w = sigma(&instance.model, d, *z, x);
                    if w <= 0.0 {
                        return None;
                    }
                    let post = posterior(&instance.model, d, *z, x).ok()?;
                    Some(Outcome {
                        weight: w,
                        next_gp: grid.nearest(&post),
                        demand: d.clone(),
                    })
                })
                .collect()
        })
        .collect();

    let mut oracle = JointValueOracle {
        config,
        grid: grid.clone(),
        module_vectors: u_vecs,
        values: vec![0.0; states],
        n_s,
        locations: l_count,
        horizon_slack: f64::INFINITY,
        clamp_events: 0,
    };

    let s_vectors = oracle.inventory_vectors();
    let mut clamp_events = 0u64;
    let mut residual = f64::INFINITY;
    for _step in 0..config.steps {
        let mut next = vec![0.0; states];
        residual = 0.0;
        for gp in 0..grid.len() {
            for (u_idx, u_vec) in oracle.module_vectors.iter().enumerate() {
                for s_vec in &s_vectors {
                    let v = bellman_min(
                        instance,
                        &oracle,
                        &outcome_table[gp],
                        u_vec,
                        s_vec,
                        &mut clamp_events,
                    );
                    let flat = gp * per_gp
                        + u_idx * n_s.pow(l_count as u32)
                        + oracle.s_index(s_vec);
                    next[flat] = v;
                    residual = residual.max((v - oracle.values[flat]).abs());
                }
            }
        }
        oracle.values = next;
    }
    oracle.clamp_events = clamp_events;
    oracle.horizon_slack = if config.steps == 0 {
        f64::INFINITY
    } else {
        instance.discount * residual / (1.0 - instance.discount)
    };
    Ok(oracle)
}

/// Minimum over all feasible (transship, modules, order-up-to) actions of
/// the one-epoch cost plus the discounted previous-iterate value.
fn bellman_min(
    instance: &Instance,
    oracle: &JointValueOracle,
    outcomes: &[Outcome],
    u_vec: &[usize],
    s_vec: &[i64],
    clamp_events: &mut u64,
) -> f64 {
    let l_count = instance.locations;
    let positive_total: i64 = s_vec.iter().map(|&s| s.max(0)).sum();
    let mut best = f64::INFINITY;

    // Enumerate balanced transshipment vectors.
    let mut ds = vec![0i64; l_count];
    enumerate_transship(instance, s_vec, positive_total, 0, 0, &mut ds, &mut |ds| {
        let s_post: Vec<i64> = s_vec.iter().zip(ds).map(|(&s, &d)| s + d).collect();
        let transship_cost: f64 = ds
            .iter()
            .enumerate()
            .map(|(l, &d)| {
                if d > 0 {
                    instance.transship_in_cost[l] * d as f64
                } else {
                    instance.transship_out_cost[l] * (-d) as f64
                }
            })
            .sum();
        for u_next in &oracle.module_vectors {
            let moved: i64 = u_next
                .iter()
                .zip(u_vec)
                .map(|(&a, &b)| (a as i64 - b as i64).abs())
                .sum();
            let move_cost = transship_cost + instance.module_move_cost * moved as f64 / 2.0;
            if move_cost >= best {
                continue;
            }
            let u_next_idx = oracle
                .module_index(u_next)
                .expect("module vector inventory is closed");
            // Order-up-to vectors within the windows.
            let mut y = vec![0i64; l_count];
            enumerate_orders(instance, &s_post, u_next, 0, &mut y, &mut |y| {
                let mut cost = move_cost;
                for o in outcomes {
                    if cost >= best {
                        break;
                    }
                    let mut stage = 0.0;
                    let mut s_next = Vec::with_capacity(l_count);
                    for l in 0..l_count {
                        stage += one_period_cost(
                            instance.backorder_cost[l],
                            instance.holding_cost[l],
                            y[l],
                            o.demand[l],
                        );
                        let mut nxt = y[l] - o.demand[l];
                        if nxt < oracle.config.s_lo || nxt > oracle.config.s_hi {
                            *clamp_events += 1;
                            nxt = nxt.clamp(oracle.config.s_lo, oracle.config.s_hi);
                        }
                        s_next.push(nxt);
                    }
                    cost += o.weight
                        * (stage
                            + instance.discount * oracle.value(o.next_gp, u_next_idx, &s_next));
                }
                if cost < best {
                    best = cost;
                }
            });
        }
    });
    best
}

fn enumerate_transship(
    instance: &Instance,
    s_vec: &[i64],
    positive_total: i64,
    l: usize,
    running: i64,
    ds: &mut Vec<i64>,
    f: &mut impl FnMut(&Vec<i64>),
) {
    if l == instance.locations {
        if running == 0 {
            f(ds);
        }
        return;
    }
    let lo = -s_vec[l].max(0);
    let hi = positive_total - s_vec[l].max(0);
    for v in lo..=hi {
        ds[l] = v;
        enumerate_transship(instance, s_vec, positive_total, l + 1, running + v, ds, f);
    }
    ds[l] = 0;
}

fn enumerate_orders(
    instance: &Instance,
    s_post: &[i64],
    u_next: &[usize],
    l: usize,
    y: &mut Vec<i64>,
    f: &mut impl FnMut(&Vec<i64>),
) {
    if l == instance.locations {
        f(y);
        return;
    }
    let cap = instance.capacity(l, u_next[l]);
    for v in s_post[l]..=s_post[l] + cap {
        y[l] = v;
        enumerate_orders(instance, s_post, u_next, l + 1, y, f);
    }
}
