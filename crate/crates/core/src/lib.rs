//! Budget-aware configuration of LLM multi-agent systems.
//!
//! Per query the configurator picks a backbone pool, matches backbones to
//! agent roles, gates redundant agents, and synthesizes a hop-limited
//! communication DAG. Everything is trained end to end with a policy
//! gradient on a reward penalised by token cost and latency.

pub mod catalog;
pub mod choice;
pub mod dataset;
pub mod diffcore;
pub mod embedding;
pub mod error;
pub mod executor;
pub mod mas;
pub mod matcher;
pub mod metrics;
pub mod policy;
pub mod selector;
pub mod synth;
pub mod topology;
pub mod trainer;

pub use error::{Error, Result};
