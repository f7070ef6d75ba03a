//! Multi-agent reinforcement learning with DAG-ordered communication.
//!
//! Agents exchange messages along the edges of a directed acyclic graph in
//! sequential rounds: agents in round `r` act after receiving messages and
//! action summaries from their upstream neighbours. The crate contains the
//! numerical kernel, topology analysis and learning, three grid-world
//! environments, the communication layer, message-efficiency metrics and an
//! actor-critic trainer.

pub mod comms;
pub mod envs;
pub mod error;
pub mod metrics;
pub mod numkit;
pub mod topology;
pub mod training;

pub use error::{Error, Result};
