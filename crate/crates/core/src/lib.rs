//! Policy iteration for the discretized mountain-car task where policy
//! evaluation is solved as a QUBO problem by an annealing solver.
//!
//! The pipeline: discretize the continuous dynamics ([`env`]) onto a grid
//! of cell centers with a stochastic band transition model ([`grid`]),
//! build the policy-evaluation linear system ([`sle`]), encode it as a
//! QUBO over fixed-point binary variables ([`qubo`]), minimize with a
//! seeded annealer ([`annealer`]), and alternate with greedy policy
//! improvement ([`qepi`]). Classical dynamic-programming baselines live
//! in [`dp`], operation-counting benchmarks in [`bench`], and the
//! command-line front end in [`cli`].

pub mod annealer;
pub mod bench;
pub mod cli;
pub mod dp;
pub mod env;
pub mod grid;
pub mod qepi;
pub mod qubo;
pub mod sle;
pub mod util;

mod error;

#[cfg(test)]
pub(crate) mod fixtures;

pub use error::{Error, Result};
