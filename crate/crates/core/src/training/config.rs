use serde::{Deserialize, Serialize};

use crate::comms::{CommGraph, DEFAULT_MESSAGE_WIDTH};
use crate::envs::{EnvKind, GridConfig};
use crate::error::{contract, Result};
use crate::topology::{gen_layered_fc, shuffle_order, Dag, DagJson};

/// How the communication graph of each episode is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyMode {
    /// Sampled per episode from a trained topology distribution.
    Learned,
    /// Layered fully-connected DAG of depth 1.
    FcD1,
    FcD2,
    FcD4,
    /// `base_dag` with its agent labels permuted by `topology_seed`.
    Shuffled,
    /// Every agent sends to every other agent, one round.
    Broadcast,
    /// No communication.
    None,
}

impl TopologyMode {
    pub const ALL: [TopologyMode; 7] = [
        TopologyMode::Learned,
        TopologyMode::FcD1,
        TopologyMode::FcD2,
        TopologyMode::FcD4,
        TopologyMode::Shuffled,
        TopologyMode::Broadcast,
        TopologyMode::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TopologyMode::Learned => "learned",
            TopologyMode::FcD1 => "fc-d1",
            TopologyMode::FcD2 => "fc-d2",
            TopologyMode::FcD4 => "fc-d4",
            TopologyMode::Shuffled => "shuffled",
            TopologyMode::Broadcast => "broadcast",
            TopologyMode::None => "none",
        }
    }
}

impl std::str::FromStr for TopologyMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        TopologyMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown topology mode '{s}'"))
    }
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub env: GridConfig,
    pub topology: TopologyMode,
    /// Seeds the fixed-graph generators (layered placement, shuffle permutation).
    pub topology_seed: u64,
    /// Graph whose order is shuffled in `shuffled` mode.
    pub base_dag: Option<DagJson>,
    pub epochs: usize,
    pub batches: usize,
    pub episodes_per_batch: usize,
    pub lambda_iei: f64,
    pub lambda_sei: f64,
    pub gamma: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub lr: f64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
    pub topo_lr: f64,
    pub topo_temperature: f64,
    /// Subtracted from the learner's episode return per edge per step.
    pub edge_cost: f64,
    pub hidden: usize,
    pub message_width: usize,
    pub critic_hidden: usize,
    /// Agents of the same role share one parameter set.
    pub share_weights: bool,
    pub seed: u64,
    pub eval_episodes: usize,
    /// Epochs between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_env(EnvKind::Tj)
    }
}

impl TrainConfig {
    pub fn for_env(kind: EnvKind) -> Self {
        Self {
            env: GridConfig::for_kind(kind),
            topology: TopologyMode::Broadcast,
            topology_seed: 0,
            base_dag: None,
            epochs: 200,
            batches: 2,
            episodes_per_batch: 100,
            lambda_iei: 0.0,
            lambda_sei: 0.0,
            gamma: 0.99,
            entropy_coef: 0.01,
            value_coef: 0.5,
            lr: 1e-3,
            grad_clip: 1.0,
            topo_lr: 0.05,
            topo_temperature: 1.0,
            edge_cost: 0.0,
            hidden: 32,
            message_width: DEFAULT_MESSAGE_WIDTH,
            critic_hidden: 64,
            share_weights: true,
            seed: 0,
            eval_episodes: 100,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if self.batches == 0 || self.episodes_per_batch == 0 {
            return Err(contract("batches and episodes_per_batch must be positive"));
        }
        if self.hidden == 0 || self.message_width == 0 || self.critic_hidden == 0 {
            return Err(contract("network widths must be positive"));
        }
        let finite_nonneg = [
            ("lambda_iei", self.lambda_iei),
            ("lambda_sei", self.lambda_sei),
            ("entropy_coef", self.entropy_coef),
            ("value_coef", self.value_coef),
            ("grad_clip", self.grad_clip),
            ("edge_cost", self.edge_cost),
        ];
        for (name, v) in finite_nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(contract(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(contract(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        for (name, v) in [("lr", self.lr), ("topo_lr", self.topo_lr), ("topo_temperature", self.topo_temperature)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(contract(format!("{name} must be positive, got {v}")));
            }
        }
        let n = self.env.n_agents;
        match self.topology {
            TopologyMode::Learned if n < 2 => return Err(contract("learned topology needs at least two agents")),
            TopologyMode::FcD1 | TopologyMode::FcD2 | TopologyMode::FcD4 => {
                let d = self.fixed_depth().expect("layered mode");
                if d + 1 > n {
                    return Err(contract(format!("depth {d} needs at least {} agents, have {n}", d + 1)));
                }
            }
            TopologyMode::Shuffled => match &self.base_dag {
                Some(d) if d.n == n => {}
                Some(d) => return Err(contract(format!("base_dag has {} agents, environment has {n}", d.n))),
                None => return Err(contract("shuffled mode needs base_dag")),
            },
            _ => {}
        }
        Ok(())
    }

    fn fixed_depth(&self) -> Option<usize> {
        match self.topology {
            TopologyMode::FcD1 => Some(1),
            TopologyMode::FcD2 => Some(2),
            TopologyMode::FcD4 => Some(4),
            _ => None,
        }
    }

    /// The fixed communication graph of non-learned modes; `None` in learned mode.
    pub fn fixed_graph(&self) -> Result<Option<CommGraph>> {
        let n = self.env.n_agents;
        Ok(Some(match self.topology {
            TopologyMode::Learned => return Ok(None),
            TopologyMode::Broadcast => CommGraph::Broadcast { n },
            TopologyMode::None => CommGraph::Dag(Dag::empty(n)),
            TopologyMode::Shuffled => {
                let base = self.base_dag.as_ref().ok_or_else(|| contract("shuffled mode needs base_dag"))?;
                CommGraph::Dag(shuffle_order(&Dag::from_json(base)?, self.topology_seed)?)
            }
            _ => {
                let d = self.fixed_depth().expect("layered mode");
                CommGraph::Dag(gen_layered_fc(n, d, self.topology_seed)?)
            }
        }))
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            actor: 1.0,
            value: self.value_coef,
            entropy: self.entropy_coef,
            iei: self.lambda_iei,
            sei: self.lambda_sei,
        }
    }
}

/// Coefficients of the loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub actor: f64,
    pub value: f64,
    pub entropy: f64,
    pub iei: f64,
    pub sei: f64,
}
