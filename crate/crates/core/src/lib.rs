//! Sparse value-based reinforcement learning.
//!
//! Dense DQN and SAC baselines, hand-scheduled polynomial pruning, and the
//! adaptive population-based pruning variants (EauDeDQN, EauDeSAC), with
//! small environments that have exact oracles.

pub mod agents;
pub mod codec;
pub mod envs;
pub mod error;
pub mod harness;
pub mod nn;
pub mod pruning;
pub mod replay;
pub mod rng;

pub use error::{Error, Result};
