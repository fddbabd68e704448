//! Dynamic escalation control for human-in-the-loop AI services.
//!
//! A stream of tasks with observable risk scores is either automated, at a
//! cost that depends on the current reliability regime of the model, or
//! escalated to a multi-server human queue. This crate computes the
//! optimal state-dependent risk thresholds by value iteration on the
//! uniformized MDP, certifies their structure numerically, maps the
//! safety-constrained capacity boundary, and benchmarks policies in a
//! discrete-event simulator.

pub mod config;
pub mod error;
pub mod model;
pub mod output;
pub mod quadrature;
pub mod sim;
pub mod solver;
pub mod stability;

pub use error::{Error, Result};
pub use model::{DriftChain, Model, QueueEconomics, RiskModel, ScoreDistribution, Threshold};
pub use quadrature::ScoreKernel;
pub use solver::{SolverConfig, ThresholdTable, ValueTable};
pub use stability::SafetySpec;
