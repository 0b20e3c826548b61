//! Simulation and verification kernels for clock processes of Markov jump
//! processes in random environments, and their extremal-process limits.
//!
//! The crate is organized by subsystem:
//!
//! - [`measures`]: tail measures, Poisson point processes and extremal processes.
//! - [`engine`]: jump chains, holding rates, clock and blocked clock processes.
//! - [`pspin`]: the p-spin SK environment on the hypercube and its comparison process.
//! - [`ehrenfest`]: the exactly solvable distance chain of hypercube random walk.
//! - [`conditions`]: estimators for the convergence conditions.
//! - [`stats`]: empirical distributions, KS tests and replica aggregation.
//!
//! Clock values are astronomically large for moderate system sizes, so every
//! clock quantity is carried as a natural logarithm (see [`logspace`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conditions;
pub mod ehrenfest;
pub mod engine;
pub mod logspace;
pub mod measures;
pub mod pspin;
pub mod stats;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("environment error: {0}")]
    Environment(String),
    #[error("trajectory too short: need {needed} steps, have {available}")]
    Range { needed: usize, available: usize },
    #[error("query time beyond the simulated horizon ({steps} steps simulated)")]
    Horizon { steps: usize },
    #[error("step budget of {budget} exhausted after {completed} of {requested} replicas")]
    Budget {
        budget: u64,
        completed: u64,
        requested: u64,
    },
    #[error("tensor for n={n}, p={p} exceeds the memory budget; largest feasible n is {max_n}")]
    Size { n: usize, p: usize, max_n: usize },
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("integrity check failed: {0}")]
    Integrity(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
