//! Problem instances: parameter container, JSON file format, and the
//! generators for the two benchmark sets.
//!
//! Set A fixes five locations and sweeps module capacity, chain size, and
//! staying probability; Set B fixes the chain and sweeps the number of
//! locations. Both cross the resulting demand models with a lattice of
//! movement-cost pairs in which the largest value acts as a "flexibility
//! disabled" sentinel.

use crate::modulation::{Belief, LocationDemand, ModulationModel};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Schema tag written into every instance file.
pub const SCHEMA_VERSION: &str = "mobiprod-instance/1";

/// Movement costs at or above this value price the corresponding move out of
/// every optimum on the benchmark scales; solvers prune such moves up front.
pub const PROHIBITIVE_COST_THRESHOLD: f64 = 1000.0;

/// Per-pmf rejection budget for demand-distribution sampling.
pub const REJECTION_BUDGET: u32 = 100_000;

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("unsupported modulation chain size {0} (supported: 2, 3, 4)")]
    UnsupportedChain(usize),
    #[error("generation failure: {0}")]
    GenerationFailure(String),
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Units for the numeric fields, written into every instance file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaUnits {
    pub inventory: String,
    pub demand: String,
    pub cost: String,
    pub time: String,
}

impl Default for MetaUnits {
    fn default() -> Self {
        MetaUnits {
            inventory: "product units".into(),
            demand: "product units/period".into(),
            cost: "currency units".into(),
            time: "periods".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub schema: String,
    pub id: String,
    pub units: MetaUnits,
}

/// All parameters of one problem instance.
///
/// Field order is the canonical serialization order; hashes are computed over
/// the compact JSON encoding and therefore stable across runs and platforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub meta: InstanceMeta,
    /// Number of locations L.
    pub locations: usize,
    /// Total number of relocatable modules Y.
    pub total_modules: usize,
    /// Per-location cap on module count.
    pub module_cap: Vec<usize>,
    /// Per-location fixed production capacity (units/period).
    pub fixed_capacity: Vec<i64>,
    /// Production capacity of one module G (units/period).
    pub module_size: i64,
    /// Per-location backorder cost per unit per period.
    pub backorder_cost: Vec<f64>,
    /// Per-location holding cost per unit per period.
    pub holding_cost: Vec<f64>,
    /// Cost of moving one unit of inventory into the location.
    pub transship_in_cost: Vec<f64>,
    /// Cost of moving one unit of inventory out of the location.
    pub transship_out_cost: Vec<f64>,
    /// Cost of moving one module between any pair of locations.
    pub module_move_cost: f64,
    /// Discount factor, strictly inside (0, 1).
    pub discount: f64,
    /// Simulation horizon in periods.
    pub horizon: usize,
    /// Explicit inventory truncation for value tables; when absent a default
    /// window derived from capacity and demand scale is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_range_override: Option<(i64, i64)>,
    /// Seed the demand model was drawn from.
    pub seed: u64,
    pub model: ModulationModel,
}

impl Instance {
    /// Instance with identical cost rates at every location. The published
    /// per-lane transshipment price is split evenly between the sending and
    /// receiving sides so one moved unit costs `transship_cost` in total.
    #[allow(clippy::too_many_arguments)]
    pub fn uniform(
        id: &str,
        model: ModulationModel,
        total_modules: usize,
        module_size: i64,
        backorder: f64,
        holding: f64,
        transship_cost: f64,
        module_move_cost: f64,
        discount: f64,
        horizon: usize,
        seed: u64,
    ) -> Instance {
        let l = model.locations();
        Instance {
            meta: InstanceMeta {
                schema: SCHEMA_VERSION.into(),
                id: id.into(),
                units: MetaUnits::default(),
            },
            locations: l,
            total_modules,
            module_cap: vec![total_modules; l],
            fixed_capacity: vec![0; l],
            module_size,
            backorder_cost: vec![backorder; l],
            holding_cost: vec![holding; l],
            transship_in_cost: vec![transship_cost / 2.0; l],
            transship_out_cost: vec![transship_cost / 2.0; l],
            module_move_cost,
            discount,
            horizon,
            s_range_override: None,
            seed,
            model,
        }
    }

    pub fn validate(&self) -> Result<(), InstanceError> {
        let l = self.locations;
        if l == 0 || self.model.locations() != l {
            return Err(InstanceError::Invalid("location count mismatch".into()));
        }
        self.model
            .validate()
            .map_err(|e| InstanceError::Invalid(e.to_string()))?;
        let per_loc = [
            self.module_cap.len(),
            self.fixed_capacity.len(),
            self.backorder_cost.len(),
            self.holding_cost.len(),
            self.transship_in_cost.len(),
            self.transship_out_cost.len(),
        ];
        if per_loc.iter().any(|&n| n != l) {
            return Err(InstanceError::Invalid(
                "per-location field length mismatch".into(),
            ));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(InstanceError::Invalid(format!(
                "discount {} outside (0,1)",
                self.discount
            )));
        }
        if self.module_size < 1 {
            return Err(InstanceError::Invalid("module size must be >= 1".into()));
        }
        if self.fixed_capacity.iter().any(|&u| u < 0) {
            return Err(InstanceError::Invalid("negative fixed capacity".into()));
        }
        let costs = self
            .backorder_cost
            .iter()
            .chain(&self.holding_cost)
            .chain(&self.transship_in_cost)
            .chain(&self.transship_out_cost)
            .chain(std::iter::once(&self.module_move_cost));
        if costs.into_iter().any(|&c| c < 0.0 || !c.is_finite()) {
            return Err(InstanceError::Invalid(
                "costs must be nonnegative and finite".into(),
            ));
        }
        if let Some((lo, hi)) = self.s_range_override {
            if lo > 0 || hi < 0 || lo >= hi {
                return Err(InstanceError::Invalid("s range must straddle zero".into()));
            }
        }
        Ok(())
    }

    /// Production capacity at location `l` with `u` modules present.
    pub fn capacity(&self, l: usize, u: usize) -> i64 {
        self.fixed_capacity[l] + u as i64 * self.module_size
    }

    pub fn max_demand(&self, l: usize) -> i64 {
        self.model.demand[l].max_outcome()
    }

    /// Inventory truncation window for location `l`'s value table.
    pub fn s_range(&self, l: usize) -> (i64, i64) {
        if let Some(r) = self.s_range_override {
            return r;
        }
        let reach = self.module_size * self.module_cap[l] as i64 + self.fixed_capacity[l];
        let half = 5 * reach + 5 * self.max_demand(l);
        (-half, half)
    }

    /// True when moving inventory through location `l` carries a sentinel
    /// "disabled" price.
    pub fn transship_prohibitive(&self, l: usize) -> bool {
        self.transship_in_cost[l] + self.transship_out_cost[l] >= PROHIBITIVE_COST_THRESHOLD
    }

    pub fn modules_prohibitive(&self) -> bool {
        self.module_move_cost >= PROHIBITIVE_COST_THRESHOLD
    }

    /// Compact JSON in canonical field order.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("instance serialization cannot fail")
    }

    pub fn hash_hex(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        hex::encode(digest)
    }

    /// First eight bytes of the canonical hash, for seed derivation.
    pub fn hash64(&self) -> u64 {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    /// Hash over exactly the fields that influence value tables (demand
    /// model, inventory costs, capacities, discount, truncation). Instances
    /// differing only in movement costs share tables.
    pub fn table_hash_hex(&self) -> String {
        #[derive(Serialize)]
        struct TableKey<'a> {
            locations: usize,
            module_cap: &'a [usize],
            fixed_capacity: &'a [i64],
            module_size: i64,
            backorder_cost: &'a [f64],
            holding_cost: &'a [f64],
            discount: f64,
            s_range_override: Option<(i64, i64)>,
            model: &'a ModulationModel,
        }
        let key = TableKey {
            locations: self.locations,
            module_cap: &self.module_cap,
            fixed_capacity: &self.fixed_capacity,
            module_size: self.module_size,
            backorder_cost: &self.backorder_cost,
            holding_cost: &self.holding_cost,
            discount: self.discount,
            s_range_override: self.s_range_override,
            model: &self.model,
        };
        let digest = Sha256::digest(serde_json::to_string(&key).unwrap().as_bytes());
        hex::encode(digest)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), InstanceError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Instance, InstanceError> {
        let text = std::fs::read_to_string(path)?;
        let inst: Instance = serde_json::from_str(&text)?;
        if inst.meta.schema != SCHEMA_VERSION {
            return Err(InstanceError::Invalid(format!(
                "unsupported schema {:?}",
                inst.meta.schema
            )));
        }
        inst.validate()?;
        Ok(inst)
    }
}

/// Which benchmark set to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SetId {
    A,
    B,
}

impl std::str::FromStr for SetId {
    type Err = InstanceError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" => Ok(SetId::A),
            "B" | "b" => Ok(SetId::B),
            other => Err(InstanceError::Invalid(format!("unknown set {other:?}"))),
        }
    }
}

/// Generation request: which set, from which master seed.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GenSpec {
    pub set: SetId,
    pub master_seed: u64,
}

pub fn generate(spec: GenSpec) -> Result<Vec<Instance>, InstanceError> {
    match spec.set {
        SetId::A => gen_set_a(spec.master_seed),
        SetId::B => gen_set_b(spec.master_seed),
    }
}

/// Birth-death modulation chain: every state keeps probability `phi` of
/// staying, endpoints send the rest inward, interior states split it evenly
/// between their neighbors.
pub fn build_chain(n: usize, phi: f64) -> Result<Vec<Vec<f64>>, InstanceError> {
    if !(2..=4).contains(&n) {
        return Err(InstanceError::UnsupportedChain(n));
    }
    assert!(phi > 0.0 && phi < 1.0, "staying probability must be in (0,1)");
    let mut p = vec![vec![0.0; n]; n];
    for (i, row) in p.iter_mut().enumerate() {
        row[i] = phi;
        if i == 0 {
            row[1] = 1.0 - phi;
        } else if i == n - 1 {
            row[n - 2] = 1.0 - phi;
        } else {
            row[i - 1] = (1.0 - phi) / 2.0;
            row[i + 1] = (1.0 - phi) / 2.0;
        }
    }
    Ok(p)
}

/// Target interval (inclusive-lo, exclusive-hi except the last state) for the
/// mean demand of modulation state `j` when there are `n` states.
fn mean_interval(n: usize, j: usize, g: i64) -> (f64, f64) {
    let g = g as f64;
    let cuts: &[f64] = match n {
        2 => &[0.0, 1.0, 2.0],
        3 => &[0.0, 0.6, 1.4, 2.0],
        4 => &[0.0, 0.5, 1.0, 1.5, 2.0],
        _ => unreachable!("chain size validated earlier"),
    };
    (cuts[j] * g, cuts[j + 1] * g)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Deterministic seed derivation from a master seed and a list of tags.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut s = splitmix64(master);
    for &t in tags {
        s = splitmix64(s ^ t);
    }
    s
}

/// Uniform draw from the probability simplex over `m` outcomes
/// (normalized unit exponentials).
fn sample_simplex(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..m)
        .map(|_| {
            let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
            -u.ln()
        })
        .collect();
    let s: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= s;
    }
    v
}

/// Per-location, per-state demand pmfs over `{0, ..., 2G}` with each state's
/// mean falling in its designated interval, sampled by rejection from the
/// uniform simplex distribution. Returns `dist[location][state][outcome]`.
pub fn gen_demand_dists(
    n: usize,
    g: i64,
    locations: usize,
    seed: u64,
) -> Result<Vec<Vec<Vec<f64>>>, InstanceError> {
    if !(2..=4).contains(&n) {
        return Err(InstanceError::UnsupportedChain(n));
    }
    let m = (2 * g + 1) as usize;
    let outcomes: Vec<i64> = (0..=2 * g).collect();
    let mut dists = Vec::with_capacity(locations);
    for l in 0..locations {
        let mut per_state = Vec::with_capacity(n);
        for j in 0..n {
            let (lo, hi) = mean_interval(n, j, g);
            let closed_right = j == n - 1;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[l as u64, j as u64]));
            let mut accepted = None;
            for _ in 0..REJECTION_BUDGET {
                let pmf = sample_simplex(&mut rng, m);
                let mean: f64 = pmf.iter().zip(&outcomes).map(|(p, &d)| p * d as f64).sum();
                let inside = mean >= lo && if closed_right { mean <= hi } else { mean < hi };
                if inside {
                    accepted = Some(pmf);
                    break;
                }
            }
            match accepted {
                Some(pmf) => per_state.push(pmf),
                None => {
                    return Err(InstanceError::GenerationFailure(format!(
                        "rejection budget exceeded for location {l} state {j}"
                    )))
                }
            }
        }
        dists.push(per_state);
    }
    Ok(dists)
}

fn demand_model(
    n: usize,
    phi: f64,
    g: i64,
    locations: usize,
    seed: u64,
) -> Result<ModulationModel, InstanceError> {
    let transition = build_chain(n, phi)?;
    let dists = gen_demand_dists(n, g, locations, seed)?;
    let outcomes: Vec<i64> = (0..=2 * g).collect();
    let demand = dists
        .into_iter()
        .map(|pmf| LocationDemand {
            outcomes: outcomes.clone(),
            pmf,
        })
        .collect();
    Ok(ModulationModel {
        transition,
        demand,
        aod: None,
    })
}

/// `Y = ceil(4L/3)` modules for `L` locations.
pub fn module_count(locations: usize) -> usize {
    (4 * locations).div_ceil(3)
}

fn fmt_cost(c: f64) -> String {
    if c.fract() == 0.0 {
        format!("{}", c as i64)
    } else {
        format!("{c}")
    }
}

fn phi_tag(phi: f64) -> String {
    format!("{:02}", (phi * 100.0).round() as i64)
}

const COST_LATTICE_A: [f64; 5] = [0.0, 1.5, 2.0, 2.5, 10000.0];
const COST_LATTICE_B: [f64; 5] = [0.0, 1.5, 2.0, 2.5, 1000.0];

/// Set A: five locations, full cross of module capacity, chain size, and
/// staying probability, each demand model paired with 25 movement-cost pairs.
pub fn gen_set_a(master_seed: u64) -> Result<Vec<Instance>, InstanceError> {
    let locations = 5;
    let mut out = Vec::with_capacity(450);
    for (gi, &g) in [1i64, 2, 5].iter().enumerate() {
        for (ni, &n) in [2usize, 3, 4].iter().enumerate() {
            for (pi, &phi) in [0.75f64, 0.95].iter().enumerate() {
                let seed = derive_seed(master_seed, &[0xA, gi as u64, ni as u64, pi as u64]);
                let model = demand_model(n, phi, g, locations, seed)?;
                for &ks in &COST_LATTICE_A {
                    for &km in &COST_LATTICE_A {
                        let id = format!(
                            "A-G{g}-N{n}-P{}-KS{}-KM{}",
                            phi_tag(phi),
                            fmt_cost(ks),
                            fmt_cost(km)
                        );
                        out.push(Instance::uniform(
                            &id,
                            model.clone(),
                            module_count(locations),
                            g,
                            2.0,
                            1.0,
                            ks,
                            km,
                            0.95,
                            30,
                            seed,
                        ));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Set B: unit modules and a three-state chain, sweeping the location count.
pub fn gen_set_b(master_seed: u64) -> Result<Vec<Instance>, InstanceError> {
    let mut out = Vec::with_capacity(150);
    for (li, &locations) in [2usize, 5, 10, 15, 20, 25].iter().enumerate() {
        let seed = derive_seed(master_seed, &[0xB, li as u64]);
        let model = demand_model(3, 0.95, 1, locations, seed)?;
        for &ks in &COST_LATTICE_B {
            for &km in &COST_LATTICE_B {
                let id = format!("B-L{locations}-KS{}-KM{}", fmt_cost(ks), fmt_cost(km));
                out.push(Instance::uniform(
                    &id,
                    model.clone(),
                    module_count(locations),
                    1,
                    2.0,
                    1.0,
                    ks,
                    km,
                    0.95,
                    30,
                    seed,
                ));
            }
        }
    }
    Ok(out)
}

/// Stationary distribution of an instance's modulation chain.
pub fn stationary(instance: &Instance) -> Result<Belief, InstanceError> {
    crate::modulation::stationary_distribution(&instance.model)
        .map_err(|e| InstanceError::Invalid(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_two_states() {
        let p = build_chain(2, 0.75).unwrap();
        assert_eq!(p, vec![vec![0.75, 0.25], vec![0.25, 0.75]]);
    }

    #[test]
    fn chain_three_states_interior_split() {
        let p = build_chain(3, 0.95).unwrap();
        let row = &p[1];
        assert!((row[0] - 0.025).abs() < 1e-15);
        assert!((row[1] - 0.95).abs() < 1e-15);
        assert!((row[2] - 0.025).abs() < 1e-15);
    }

    #[test]
    fn chain_rows_are_stochastic() {
        for n in 2..=4 {
            for phi in [0.6, 0.75, 0.95] {
                let p = build_chain(n, phi).unwrap();
                for row in &p {
                    let s: f64 = row.iter().sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn chain_unsupported_size() {
        assert!(matches!(
            build_chain(5, 0.9),
            Err(InstanceError::UnsupportedChain(5))
        ));
    }

    #[test]
    fn demand_means_fall_in_intervals() {
        for (n, g) in [(2usize, 1i64), (3, 2), (4, 1)] {
            let dists = gen_demand_dists(n, g, 3, 7).unwrap();
            for per_state in &dists {
                for (j, pmf) in per_state.iter().enumerate() {
                    let sum: f64 = pmf.iter().sum();
                    assert!((sum - 1.0).abs() < 1e-12);
                    assert_eq!(pmf.len(), (2 * g + 1) as usize);
                    let mean: f64 = pmf.iter().enumerate().map(|(d, p)| p * d as f64).sum();
                    let (lo, hi) = mean_interval(n, j, g);
                    assert!(mean >= lo, "mean {mean} below {lo}");
                    if j == n - 1 {
                        assert!(mean <= hi);
                    } else {
                        assert!(mean < hi);
                    }
                }
            }
        }
    }

    #[test]
    fn demand_generation_is_deterministic() {
        let a = gen_demand_dists(3, 2, 4, 99).unwrap();
        let b = gen_demand_dists(3, 2, 4, 99).unwrap();
        assert_eq!(a, b);
        let c = gen_demand_dists(3, 2, 4, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn set_a_shape() {
        let set = gen_set_a(42).unwrap();
        assert_eq!(set.len(), 450);
        let mut demand_models: Vec<String> = set.iter().map(|i| i.table_hash_hex()).collect();
        demand_models.sort();
        demand_models.dedup();
        assert_eq!(demand_models.len(), 18);
        for inst in &set {
            inst.validate().unwrap();
            assert_eq!(inst.locations, 5);
            assert_eq!(inst.total_modules, 7);
            let m = inst.model.demand[0].num_outcomes() as i64;
            assert_eq!(m, 2 * inst.module_size + 1);
        }
        assert!(set.iter().any(|i| i.model.demand[0].num_outcomes() == 11));
    }

    #[test]
    fn set_b_shape() {
        let set = gen_set_b(42).unwrap();
        assert_eq!(set.len(), 150);
        let mut demand_models: Vec<String> = set.iter().map(|i| i.table_hash_hex()).collect();
        demand_models.sort();
        demand_models.dedup();
        assert_eq!(demand_models.len(), 6);
        for inst in &set {
            inst.validate().unwrap();
            assert_eq!(inst.model.demand[0].num_outcomes(), 3);
        }
        let biggest = set.iter().find(|i| i.locations == 25).unwrap();
        assert_eq!(biggest.total_modules, 34);
    }

    #[test]
    fn generation_is_byte_identical() {
        let a = gen_set_b(7).unwrap();
        let b = gen_set_b(7).unwrap();
        let ja: Vec<String> = a.iter().map(|i| i.canonical_json()).collect();
        let jb: Vec<String> = b.iter().map(|i| i.canonical_json()).collect();
        assert_eq!(ja, jb);
    }

    #[test]
    fn save_load_round_trip() {
        let set = gen_set_b(3).unwrap();
        let dir = std::env::temp_dir().join("mobiprod-instance-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("inst.json");
        set[0].save(&path).unwrap();
        let loaded = Instance::load(&path).unwrap();
        assert_eq!(loaded, set[0]);
        assert_eq!(loaded.hash_hex(), set[0].hash_hex());
    }

    #[test]
    fn prohibitive_sentinels() {
        let set = gen_set_a(1).unwrap();
        let disabled = set
            .iter()
            .find(|i| i.meta.id.ends_with("KS10000-KM10000"))
            .unwrap();
        assert!(disabled.transship_prohibitive(0));
        assert!(disabled.modules_prohibitive());
        let cheap = set.iter().find(|i| i.meta.id.ends_with("KS0-KM0")).unwrap();
        assert!(!cheap.transship_prohibitive(0));
        assert!(!cheap.modules_prohibitive());
    }

    #[test]
    fn default_s_range_scales_with_capacity_and_demand() {
        let set = gen_set_b(3).unwrap();
        let inst = &set[0];
        let (lo, hi) = inst.s_range(0);
        let reach = inst.module_size * inst.module_cap[0] as i64;
        assert_eq!(hi, 5 * reach + 5 * inst.max_demand(0));
        assert_eq!(lo, -hi);
    }
}
