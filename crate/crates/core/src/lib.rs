//! Desk-scale continual-learning laboratory built around gradient-space
//! partitioning.
//!
//! A frozen toy classifier learns a sequence of tasks through per-task
//! low-rank adapters. Between tasks the library maintains the average
//! gradient of all completed tasks per layer, splits its singular spectrum
//! into a major and a minor part, and confines the next task's update to
//! the minor side. The split point `k` is chosen per layer by minimizing
//! `(t-1)·ε(k) − α·k/d`, trading interference with old tasks against room
//! for the new one; a fixed-threshold rule and unconstrained adapters are
//! available as baselines.
//!
//! The crates in this workspace split as: this crate holds the algorithms
//! and the experiment runner, `splitlora-cli` the operator surface, and
//! `splitlora-bench` the criterion benchmarks.

pub mod adamw;
pub mod config;
pub mod error;
pub mod experiment;
pub mod gradmem;
pub mod linalg;
pub mod lora;
pub mod metrics;
pub mod network;
pub mod report;
pub mod rng;
pub mod subspace;
pub mod tasks;
pub mod theory;
pub mod trainer;

pub use error::Error;
pub use linalg::{Matrix, SvdResult};
pub use metrics::AccuracyMatrix;
pub use subspace::{MinorSubspace, SolverConfig, Spectrum};

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
