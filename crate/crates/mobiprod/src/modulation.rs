//! Modulation-process model and belief-state algebra.
//!
//! The modulation process is an exogenous, partially observed Markov chain
//! that drives the per-location demand distributions (and, optionally, an
//! additional observation channel). Everything the controller knows about it
//! is summarized by a belief vector over the chain's states. This module owns
//! that algebra: observation likelihoods, Bayesian posteriors, stationary
//! distributions, and the finite belief grids that value tables are built on.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for probability-vector normalization checks.
pub const PROB_SUM_TOL: f64 = 1e-12;
/// Componentwise tolerance used when deduplicating belief-grid points.
pub const GRID_DEDUP_TOL: f64 = 1e-9;
/// Residual tolerance on the stationary fixed-point check.
pub const STATIONARY_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum ModulationError {
    #[error("no unique stationary distribution: {0}")]
    NoStationaryDistribution(String),
    #[error("observation has zero likelihood under the current belief")]
    ZeroLikelihood,
    #[error("invalid belief: {0}")]
    InvalidBelief(String),
    #[error("invalid modulation model: {0}")]
    InvalidModel(String),
}

/// Demand description for one location: a shared outcome list and one pmf
/// over those outcomes per modulation state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationDemand {
    /// Demand outcomes in strictly increasing order (units/period).
    pub outcomes: Vec<i64>,
    /// `pmf[j][n]` = probability of `outcomes[n]` given next modulation state `j`.
    pub pmf: Vec<Vec<f64>>,
}

impl LocationDemand {
    pub fn num_outcomes(&self) -> usize {
        self.outcomes.len()
    }

    pub fn max_outcome(&self) -> i64 {
        self.outcomes.last().copied().unwrap_or(0)
    }

    pub fn outcome_index(&self, d: i64) -> Option<usize> {
        self.outcomes.binary_search(&d).ok()
    }
}

/// The modulation Markov chain together with its observation channels.
///
/// Demand across locations is conditionally independent given the next
/// modulation state (product form); the optional additional-observation
/// channel carries one symbol per period with a per-state pmf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationModel {
    /// Row-stochastic transition matrix of the modulation chain.
    pub transition: Vec<Vec<f64>>,
    /// Per-location demand model.
    pub demand: Vec<LocationDemand>,
    /// Optional additional-observation channel: `aod[j][z]` = probability of
    /// symbol `z` given next modulation state `j`. Absent by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aod: Option<Vec<Vec<f64>>>,
}

impl ModulationModel {
    pub fn n_states(&self) -> usize {
        self.transition.len()
    }

    pub fn locations(&self) -> usize {
        self.demand.len()
    }

    pub fn validate(&self) -> Result<(), ModulationError> {
        let n = self.n_states();
        if n == 0 {
            return Err(ModulationError::InvalidModel("empty chain".into()));
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.len() != n {
                return Err(ModulationError::InvalidModel(format!(
                    "transition row {i} has length {} (expected {n})",
                    row.len()
                )));
            }
            if row.iter().any(|&p| p < 0.0) {
                return Err(ModulationError::InvalidModel(format!(
                    "negative entry in transition row {i}"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(ModulationError::InvalidModel(format!(
                    "transition row {i} sums to {sum}"
                )));
            }
        }
        if self.demand.is_empty() {
            return Err(ModulationError::InvalidModel("no locations".into()));
        }
        for (l, loc) in self.demand.iter().enumerate() {
            if loc.outcomes.is_empty() {
                return Err(ModulationError::InvalidModel(format!(
                    "location {l} has no demand outcomes"
                )));
            }
            if loc.outcomes.windows(2).any(|w| w[0] >= w[1]) {
                return Err(ModulationError::InvalidModel(format!(
                    "location {l} outcomes not strictly increasing"
                )));
            }
            if loc.outcomes[0] < 0 {
                return Err(ModulationError::InvalidModel(format!(
                    "location {l} has a negative demand outcome"
                )));
            }
            if loc.pmf.len() != n {
                return Err(ModulationError::InvalidModel(format!(
                    "location {l} has {} state pmfs (expected {n})",
                    loc.pmf.len()
                )));
            }
            for (j, pmf) in loc.pmf.iter().enumerate() {
                if pmf.len() != loc.outcomes.len() {
                    return Err(ModulationError::InvalidModel(format!(
                        "location {l} state {j} pmf length mismatch"
                    )));
                }
                if pmf.iter().any(|&p| p < 0.0) {
                    return Err(ModulationError::InvalidModel(format!(
                        "location {l} state {j} pmf has a negative entry"
                    )));
                }
                let sum: f64 = pmf.iter().sum();
                if (sum - 1.0).abs() > PROB_SUM_TOL {
                    return Err(ModulationError::InvalidModel(format!(
                        "location {l} state {j} pmf sums to {sum}"
                    )));
                }
            }
        }
        if let Some(aod) = &self.aod {
            if aod.len() != n {
                return Err(ModulationError::InvalidModel(
                    "aod channel state count mismatch".into(),
                ));
            }
            let m = aod[0].len();
            for (j, pmf) in aod.iter().enumerate() {
                if pmf.len() != m || m == 0 {
                    return Err(ModulationError::InvalidModel(format!(
                        "aod state {j} pmf length mismatch"
                    )));
                }
                let sum: f64 = pmf.iter().sum();
                if (sum - 1.0).abs() > PROB_SUM_TOL || pmf.iter().any(|&p| p < 0.0) {
                    return Err(ModulationError::InvalidModel(format!(
                        "aod state {j} pmf is not a distribution"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Probability of the joint demand vector `d` given next state `j`
    /// (product over locations).
    pub fn demand_likelihood(&self, j: usize, d: &[i64]) -> f64 {
        debug_assert_eq!(d.len(), self.locations());
        let mut p = 1.0;
        for (loc, &dl) in self.demand.iter().zip(d) {
            match loc.outcome_index(dl) {
                Some(n) => p *= loc.pmf[j][n],
                None => return 0.0,
            }
        }
        p
    }

    fn aod_likelihood(&self, j: usize, z: Option<usize>) -> f64 {
        match (z, &self.aod) {
            (Some(z), Some(aod)) => aod[j].get(z).copied().unwrap_or(0.0),
            // No symbol observed: the channel contributes nothing.
            _ => 1.0,
        }
    }

    /// Belief pushed one step through the chain: `(xP)_j`.
    pub fn one_step_state_dist(&self, x: &Belief) -> Vec<f64> {
        let n = self.n_states();
        let mut out = vec![0.0; n];
        for (i, &xi) in x.as_slice().iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (j, o) in out.iter_mut().enumerate() {
                *o += xi * self.transition[i][j];
            }
        }
        out
    }

    /// One-step-ahead marginal pmf of location `l`'s demand under belief `x`,
    /// indexed like `demand[l].outcomes`.
    pub fn one_step_demand_pmf(&self, l: usize, x: &Belief) -> Vec<f64> {
        let xp = self.one_step_state_dist(x);
        let loc = &self.demand[l];
        let mut w = vec![0.0; loc.num_outcomes()];
        for (j, &pj) in xp.iter().enumerate() {
            if pj == 0.0 {
                continue;
            }
            for (n, wn) in w.iter_mut().enumerate() {
                *wn += pj * loc.pmf[j][n];
            }
        }
        w
    }

    /// Every joint observation `(d, z)` with positive support under at least
    /// one state. Intended for small models (oracles and normalization tests).
    pub fn joint_outcomes(&self) -> Vec<(Vec<i64>, Option<usize>)> {
        let mut demands: Vec<Vec<i64>> = vec![Vec::new()];
        for loc in &self.demand {
            let mut next = Vec::with_capacity(demands.len() * loc.outcomes.len());
            for base in &demands {
                for &d in &loc.outcomes {
                    let mut v = base.clone();
                    v.push(d);
                    next.push(v);
                }
            }
            demands = next;
        }
        match &self.aod {
            None => demands.into_iter().map(|d| (d, None)).collect(),
            Some(aod) => {
                let symbols = aod[0].len();
                let mut out = Vec::with_capacity(demands.len() * symbols);
                for d in demands {
                    for z in 0..symbols {
                        out.push((d.clone(), Some(z)));
                    }
                }
                out
            }
        }
    }
}

/// A probability vector over modulation states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief(Vec<f64>);

impl Belief {
    pub fn new(x: Vec<f64>) -> Result<Self, ModulationError> {
        if x.is_empty() {
            return Err(ModulationError::InvalidBelief("empty vector".into()));
        }
        if x.iter().any(|&v| v < 0.0) {
            return Err(ModulationError::InvalidBelief("negative entry".into()));
        }
        let sum: f64 = x.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(ModulationError::InvalidBelief(format!("sums to {sum}")));
        }
        Ok(Belief(x))
    }

    /// Point mass on state `i`.
    pub fn degenerate(n: usize, i: usize) -> Self {
        let mut x = vec![0.0; n];
        x[i] = 1.0;
        Belief(x)
    }

    pub fn uniform(n: usize) -> Self {
        Belief(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn distance_sq(&self, other: &Belief) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// A finite, ordered set of beliefs on which value tables are indexed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefGrid {
    points: Vec<Belief>,
    /// Denominator `k` of the lattice step `1/k`.
    resolution: u32,
}

impl BeliefGrid {
    pub fn points(&self) -> &[Belief] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn point(&self, idx: usize) -> &Belief {
        &self.points[idx]
    }

    /// Index of the grid point closest to `x` in Euclidean distance; ties go
    /// to the earlier point in grid order.
    pub fn nearest(&self, x: &Belief) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = p.distance_sq(x);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

/// Grid point closest to `x`; ties broken by grid enumeration order.
pub fn nearest_grid_point<'g>(grid: &'g BeliefGrid, x: &Belief) -> &'g Belief {
    grid.point(grid.nearest(x))
}

/// All beliefs on the lattice `{0, 1/k, ..., 1}^N` summing to one, in
/// lexicographic order of the coordinate vector, plus `pi` when supplied
/// (appended unless it already lies on the lattice).
pub fn belief_grid(n: usize, resolution: u32, pi: Option<&Belief>) -> BeliefGrid {
    assert!(n >= 1 && resolution >= 1);
    let k = resolution;
    let mut points = Vec::new();
    let mut counts = vec![0u32; n];
    fill_compositions(&mut points, &mut counts, 0, k, k);
    if let Some(pi) = pi {
        let dup = points
            .iter()
            .any(|p| p.as_slice().iter().zip(pi.as_slice()).all(|(a, b)| (a - b).abs() <= GRID_DEDUP_TOL));
        if !dup {
            points.push(pi.clone());
        }
    }
    BeliefGrid { points, resolution }
}

fn fill_compositions(out: &mut Vec<Belief>, counts: &mut [u32], idx: usize, left: u32, k: u32) {
    if idx == counts.len() - 1 {
        counts[idx] = left;
        let x: Vec<f64> = counts.iter().map(|&c| c as f64 / k as f64).collect();
        out.push(Belief(x));
        return;
    }
    for c in 0..=left {
        counts[idx] = c;
        fill_compositions(out, counts, idx + 1, left - c, k);
    }
}

/// Stationary distribution of the modulation chain, solved directly from the
/// balance equations with one equation replaced by the normalization row.
/// A rank-deficient system (more than one stationary distribution, or none
/// reachable by the solve) is reported as an error.
pub fn stationary_distribution(model: &ModulationModel) -> Result<Belief, ModulationError> {
    let n = model.n_states();
    // Rows of (P^T - I), with the last balance equation replaced by sum = 1.
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = model.transition[j][i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        a[n - 1][j] = 1.0;
    }
    b[n - 1] = 1.0;
    let mut pi = solve_linear(a, b)
        .ok_or_else(|| ModulationError::NoStationaryDistribution("singular balance system".into()))?;
    for v in pi.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-9 {
                return Err(ModulationError::NoStationaryDistribution(
                    "solution has negative mass".into(),
                ));
            }
            *v = 0.0;
        }
    }
    let sum: f64 = pi.iter().sum();
    for v in pi.iter_mut() {
        *v /= sum;
    }
    // Fixed-point residual check: ||pi P - pi||_inf.
    let belief = Belief(pi);
    let next = model.one_step_state_dist(&belief);
    let resid = next
        .iter()
        .zip(belief.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    if resid > STATIONARY_TOL {
        return Err(ModulationError::NoStationaryDistribution(format!(
            "fixed-point residual {resid:e}"
        )));
    }
    Ok(belief)
}

/// Dense Gaussian elimination with partial pivoting; `None` when singular.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&r1, &r2| a[r1][col].abs().total_cmp(&a[r2][col].abs()))
            .unwrap();
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Probability of observing `(d, z)` next period given prior belief `x`.
pub fn sigma(model: &ModulationModel, d: &[i64], z: Option<usize>, x: &Belief) -> f64 {
    let xp = model.one_step_state_dist(x);
    let mut s = 0.0;
    for (j, &pj) in xp.iter().enumerate() {
        if pj == 0.0 {
            continue;
        }
        s += pj * model.demand_likelihood(j, d) * model.aod_likelihood(j, z);
    }
    s
}

/// Posterior belief after observing `(d, z)` with prior `x` (Bayes' rule).
pub fn posterior(
    model: &ModulationModel,
    d: &[i64],
    z: Option<usize>,
    x: &Belief,
) -> Result<Belief, ModulationError> {
    let xp = model.one_step_state_dist(x);
    let mut numer = vec![0.0; model.n_states()];
    for (j, nj) in numer.iter_mut().enumerate() {
        *nj = xp[j] * model.demand_likelihood(j, d) * model.aod_likelihood(j, z);
    }
    normalize_posterior(numer)
}

/// Posterior computed from location `l`'s demand alone, ignoring the other
/// locations and the additional observation channel.
pub fn local_posterior(
    model: &ModulationModel,
    l: usize,
    d: i64,
    x: &Belief,
) -> Result<Belief, ModulationError> {
    let xp = model.one_step_state_dist(x);
    let loc = &model.demand[l];
    let n_idx = loc.outcome_index(d);
    let mut numer = vec![0.0; model.n_states()];
    for (j, nj) in numer.iter_mut().enumerate() {
        let lik = n_idx.map(|n| loc.pmf[j][n]).unwrap_or(0.0);
        *nj = xp[j] * lik;
    }
    normalize_posterior(numer)
}

fn normalize_posterior(mut numer: Vec<f64>) -> Result<Belief, ModulationError> {
    let s: f64 = numer.iter().sum();
    if s <= 0.0 {
        return Err(ModulationError::ZeroLikelihood);
    }
    for v in numer.iter_mut() {
        *v /= s;
    }
    Ok(Belief(numer))
}

/// One-step-ahead mean demand at location `l` under belief `x`.
pub fn expected_demand(model: &ModulationModel, l: usize, x: &Belief) -> f64 {
    let xp = model.one_step_state_dist(x);
    let loc = &model.demand[l];
    let mut mean = 0.0;
    for (j, &pj) in xp.iter().enumerate() {
        if pj == 0.0 {
            continue;
        }
        for (n, &d) in loc.outcomes.iter().enumerate() {
            mean += pj * loc.pmf[j][n] * d as f64;
        }
    }
    mean
}
