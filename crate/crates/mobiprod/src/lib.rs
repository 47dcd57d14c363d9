//! Solver and simulation toolkit for multi-location production-inventory
//! systems with relocatable production modules, inventory transshipment, and
//! demand driven by a partially observed Markov modulation process.
//!
//! The crate is organized around the pipeline used by the command-line tool:
//!
//! * [`modulation`] — the modulation chain, demand/observation likelihoods,
//!   and belief-vector algebra (posteriors, stationary distribution, grids).
//! * [`sl_value`] — single-location value tables under the static-belief
//!   approximation, blending, facet extraction, and the approximation-gap
//!   bound.
//! * [`optimizer`] — exact solvers for the one-epoch decision programs: a
//!   bounded-variable simplex, a branch-and-bound integer solver, and a
//!   dynamic program specialized to the two-coupling-constraint relocation
//!   structure.
//! * [`policies`] — the seven control policies, each mapping a system state
//!   to a transship/relocate/replenish action.
//! * [`instances`] — generators for the benchmark instance sets and the
//!   JSON instance file format.
//! * [`harness`] — the seeded Monte Carlo rollout engine, the brute-force
//!   joint value oracle used in tests, and report emission.

pub mod harness;
pub mod instances;
pub mod modulation;
pub mod optimizer;
pub mod policies;
pub mod sl_value;
