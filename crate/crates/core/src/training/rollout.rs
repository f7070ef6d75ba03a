use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::comms::{propagate, CommGraph, CommLedger, StepComm};
use crate::envs::{Env, EnvKind, GridConfig, BRAKE, STAY};
use crate::error::{Error, Result};
use crate::numkit::ForwardCache;
use crate::topology::TopoSample;

use super::derive_seed;
use super::policy::PolicySet;

/// Everything recorded about one environment step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub observations: Vec<Vec<f64>>,
    pub payloads: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    /// Log-probability of the chosen action; 0 for inactive agents.
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Centralized critic estimates at the time of acting.
    pub values: Vec<f64>,
    pub active: Vec<bool>,
    pub terminal: Vec<bool>,
}

/// One episode: per-step records, communication graph and ledger.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub steps: Vec<StepRecord>,
    pub graph: CommGraph,
    /// Whether each agent's payload was transmitted.
    pub sent: Vec<bool>,
    /// Set when the graph was drawn from the topology learner.
    #[serde(skip)]
    pub sample: Option<TopoSample>,
    pub ledger: CommLedger,
    pub success: bool,
    pub length: usize,
    /// Sum of all agents' rewards over the episode.
    pub total_reward: f64,
}

/// How actions are chosen from the actor distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionMode {
    Sample,
    Greedy,
}

/// Action taken in empty TJ slots; never scored.
pub fn idle_action(env: &GridConfig) -> usize {
    match env.kind {
        EnvKind::Tj => BRAKE,
        EnvKind::Pp | EnvKind::Pcp => STAY,
    }
}

/// Forward state of one step, kept for the backward pass.
pub(crate) struct StepPass {
    pub enc: Vec<ForwardCache>,
    pub comm: StepComm,
    pub actor: Vec<Option<ForwardCache>>,
    pub critic: Option<ForwardCache>,
    pub values: Vec<f64>,
}

impl StepPass {
    pub fn probs(&self, agent: usize) -> Option<&[f64]> {
        self.actor[agent].as_ref().map(|c| c.output())
    }
}

/// Encoder, communication, actors and (optionally) the critic for one step.
/// `choose` maps an agent's action probabilities to an action; inactive
/// agents skip their actor and get `None`.
pub(crate) fn step_pass<F>(
    policy: &PolicySet,
    graph: &CommGraph,
    observations: &[Vec<f64>],
    active: &[bool],
    with_critic: bool,
    ledger: Option<(&mut CommLedger, usize, usize)>,
    mut choose: F,
) -> Result<StepPass>
where
    F: FnMut(usize, Option<&[f64]>) -> Result<usize>,
{
    let n = policy.n_agents();
    let mut enc = Vec::with_capacity(n);
    let mut base = Vec::with_capacity(n);
    for (a, obs) in observations.iter().enumerate() {
        let (h, cache) = policy.agent(a).encoder.forward(obs)?;
        base.push(h);
        enc.push(cache);
    }
    let mut actor: Vec<Option<ForwardCache>> = vec![None; n];
    let comm = propagate(graph, &base, &policy.links(), policy.summary_width(), ledger, |a, h| {
        if !active[a] {
            return choose(a, None);
        }
        let (probs, cache) = policy.agent(a).actor.forward(h)?;
        let choice = choose(a, Some(&probs))?;
        actor[a] = Some(cache);
        Ok(choice)
    })?;
    let (critic, values) = if with_critic {
        let joint: Vec<f64> = comm.hiddens.iter().flatten().copied().collect();
        let (v, c) = policy.critic.forward(&joint)?;
        (Some(c), v)
    } else {
        (None, Vec::new())
    };
    Ok(StepPass {
        enc,
        comm,
        actor,
        critic,
        values,
    })
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Plays one episode. `seed` fixes both the environment and action sampling;
/// `episode` stamps the ledger records.
pub fn rollout(
    policy: &PolicySet,
    env_config: &GridConfig,
    graph: &CommGraph,
    sample: Option<TopoSample>,
    seed: u64,
    mode: ActionMode,
    episode: usize,
) -> Result<EpisodeTrace> {
    if graph.n() != policy.n_agents() || env_config.n_agents != policy.n_agents() {
        return Err(Error::Contract("graph, policy and environment disagree on the agent count".into()));
    }
    let mut env = Env::reset(env_config, derive_seed(seed, &[0]))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
    let idle = idle_action(env_config);
    let n = policy.n_agents();
    let mut ledger = CommLedger::new();
    let mut steps = Vec::new();
    let mut total_reward = 0.0;
    while !env.is_done() {
        let observations = env.observe_all();
        let active: Vec<bool> = (0..n).map(|a| env.is_active(a)).collect();
        let mut log_probs = vec![0.0; n];
        let t = env.steps();
        let pass = step_pass(
            policy,
            graph,
            &observations,
            &active,
            mode == ActionMode::Sample,
            Some((&mut ledger, episode, t)),
            |a, probs| {
                let Some(probs) = probs else {
                    return Ok(idle);
                };
                let choice = match mode {
                    ActionMode::Greedy => argmax(probs),
                    ActionMode::Sample => WeightedIndex::new(probs)
                        .map_err(|e| Error::Numeric(format!("agent {a}: bad action distribution: {e}")))?
                        .sample(&mut rng),
                };
                log_probs[a] = probs[choice].ln();
                Ok(choice)
            },
        )?;
        let result = env.step(&pass.comm.actions)?;
        total_reward += result.rewards.iter().sum::<f64>();
        steps.push(StepRecord {
            observations,
            payloads: pass.comm.payloads,
            actions: pass.comm.actions,
            log_probs,
            rewards: result.rewards,
            values: pass.values,
            active,
            terminal: result.terminal,
        });
    }
    Ok(EpisodeTrace {
        length: steps.len(),
        steps,
        sent: graph.senders(),
        graph: graph.clone(),
        sample,
        ledger,
        success: env.success(),
        total_reward,
    })
}
