//! Centralized-critic actor-critic training with DAG-ordered communication.

mod config;
mod loss;
mod policy;
mod rollout;
mod trainer;

pub use config::{LossWeights, TopologyMode, TrainConfig};
pub use loss::{
    compute_loss, compute_loss_weighted, discounted_returns, loss_grad_check, loss_value, LossBreakdown, NetGradCheck,
};
pub use policy::{AgentNets, PolicyOptim, PolicySet};
pub use rollout::{idle_action, rollout, ActionMode, EpisodeTrace, StepRecord};
pub use trainer::{
    batch_metrics, evaluate, load_checkpoint, save_checkpoint, train, train_with, Checkpoint, EpochReport, TrainOutcome,
};

/// Mixes `parts` into `base` (splitmix64 finalizer per part). Used to give
/// every episode an independent, order-free seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}
