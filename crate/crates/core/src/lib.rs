//! Base-station site selection by reinforcement learning.
//!
//! A policy network picks `k` sites one at a time from a candidate pool.
//! It is trained with group-relative policy optimization against a staged
//! reward curriculum and anchored by a KL penalty to a behavior-cloned
//! reference policy. PPO and single-stage GRPO are included as baselines,
//! and an RSRP grid simulator evaluates the coverage of a plan.

pub mod cli;
pub mod coverage;
pub mod error;
pub mod eval;
pub mod geo;
pub mod policy;
pub mod reward;
pub mod scenario;
pub mod train;

pub use error::{Error, Result};
