//! Function autoscaling laboratory.
//!
//! A seeded discrete-event simulator of a function's replica pool, a
//! window-stepped environment over it, recurrent and feed-forward RL agents,
//! threshold autoscalers, and the experiment plumbing that ties them together.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub use faas_lab_nn as nn;

pub mod agents;
pub mod baselines;
pub mod env;
pub mod experiment;
pub mod sim;
pub mod workload;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
}
