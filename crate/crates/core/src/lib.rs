//! Learning and analyzing parameterized families of symmetric games.
//!
//! The crate is organized around a few layers:
//!
//! - [`game`]: symmetric-game mathematics (mixtures, opponent profiles, exact
//!   deviation payoffs by enumeration, regret, simplex lattices).
//! - [`baggfn`]: compact random game families (bipartite action-graph games with
//!   additive function nodes) with fast exact deviation-payoff oracles.
//! - [`surrogate`]: multi-headed dense networks mapping `(mixture, parameter)` to
//!   deviation payoffs, trained with hand-written backprop and Adam.
//! - [`nash`]: batched replicator dynamics over whole families.
//! - [`pipeline`]: the sample / fit / find-equilibria / resample loop.
//! - [`analysis`]: lattice MAE, regret error, robustness and sensitivity.
//! - [`experiment`]: declarative experiment configs and CSV-producing runners.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled (the default) and plain iteration otherwise.
//! Every parallel map is chunked independently of the thread count, so outputs
//! are bit-identical for any pool size.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod baggfn;
pub mod error;
pub mod experiment;
pub mod game;
pub mod nash;
pub mod par;
pub mod pipeline;
pub mod report;
pub mod sampling;
pub mod seeding;
pub mod surrogate;

pub use error::{Error, Result};

/// Version string embedded in CSV comment lines and manifests.
pub const TOOL_VERSION: &str = concat!("gamefam ", env!("CARGO_PKG_VERSION"));
