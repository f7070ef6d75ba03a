//! Communication topologies: DAG validation and analysis, round scheduling,
//! ablation generators and a learnable topology distribution.

mod dag;
mod generators;
mod learner;

pub use dag::{depth, nilpotent_index, rounds, validate_acyclic, Acyclicity, AdjMatrix, Dag, DagJson};
pub use generators::{gen_layered_fc, relabel, shuffle_order};
pub use learner::{sample_topology, sigmoid, TopoLearner, TopoLearnerParams, TopoSample};
