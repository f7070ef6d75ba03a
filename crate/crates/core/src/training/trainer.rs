use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comms::CommGraph;
use crate::envs::GridConfig;
use crate::error::{Error, Result};
use crate::metrics::{avg_steps, message_entropy, sei, success_rate, MetricsRecord};
use crate::numkit::{axpy, read_checkpoint, write_checkpoint};
use crate::topology::{sample_topology, TopoLearner, TopoLearnerParams, TopoSample};

use super::config::TrainConfig;
use super::derive_seed;
use super::loss::compute_loss;
use super::policy::{PolicyOptim, PolicySet};
use super::rollout::{rollout, ActionMode, EpisodeTrace};

/// Seed-derivation tags; distinct streams never collide.
const TAG_INIT: u64 = 1;
const TAG_EPISODE: u64 = 2;
const TAG_TOPOLOGY: u64 = 3;

/// Consecutive non-finite batches tolerated before training aborts.
const MAX_BAD_BATCHES: usize = 3;

/// Decay of the topology learner's running-mean baseline.
const BASELINE_DECAY: f64 = 0.9;

pub struct TrainOutcome {
    pub policy: PolicySet,
    pub learner: Option<TopoLearnerParams>,
    pub curve: Vec<MetricsRecord>,
    /// Graph used for evaluation: the fixed graph, or the learner's mode.
    pub eval_graph: CommGraph,
}

/// State handed to the per-epoch callback of [`train_with`].
pub struct EpochReport<'a> {
    pub record: &'a MetricsRecord,
    pub policy: &'a PolicySet,
    pub learner: Option<&'a TopoLearnerParams>,
    pub eval_graph: CommGraph,
}

/// Metrics over a set of episodes. IEI averages the entropy of every
/// transmitted payload; SEI compares per-agent mean payloads.
pub fn batch_metrics(traces: &[EpisodeTrace]) -> Result<MetricsRecord> {
    let successes: Vec<bool> = traces.iter().map(|t| t.success).collect();
    let lengths: Vec<usize> = traces.iter().map(|t| t.length).collect();
    let n = traces.first().map_or(0, |t| t.sent.len());
    let width = traces
        .iter()
        .flat_map(|t| t.steps.first())
        .map(|s| s.payloads[0].len())
        .next()
        .unwrap_or(0);
    let mut sums = vec![vec![0.0; width]; n];
    let mut counts = vec![0usize; n];
    let mut entropy = 0.0;
    let mut messages = 0usize;
    let mut transmissions = 0usize;
    for t in traces {
        transmissions += t.ledger.total();
        for s in &t.steps {
            for a in (0..n).filter(|&a| t.sent[a]) {
                entropy += message_entropy(&s.payloads[a]);
                messages += 1;
                axpy(1.0, &s.payloads[a], &mut sums[a]);
                counts[a] += 1;
            }
        }
    }
    let means: Vec<Vec<f64>> = (0..n)
        .filter(|&a| counts[a] > 0)
        .map(|a| sums[a].iter().map(|v| v / counts[a] as f64).collect())
        .collect();
    Ok(MetricsRecord {
        epoch: 0,
        success_rate: success_rate(&successes)?,
        avg_steps: avg_steps(&lengths)?,
        c_comm: transmissions as f64 / traces.len() as f64,
        iei: if messages > 0 { entropy / messages as f64 } else { 0.0 },
        sei: if means.len() >= 2 { sei(&means)? } else { 0.0 },
        loss: 0.0,
    })
}

enum Topology {
    Fixed(CommGraph),
    Learned { learner: TopoLearner, baseline: Option<f64> },
}

impl Topology {
    fn eval_graph(&self) -> CommGraph {
        match self {
            Topology::Fixed(g) => g.clone(),
            Topology::Learned { learner, .. } => CommGraph::Dag(learner.params.mode()),
        }
    }

    fn params(&self) -> Option<&TopoLearnerParams> {
        match self {
            Topology::Fixed(_) => None,
            Topology::Learned { learner, .. } => Some(&learner.params),
        }
    }
}

pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(config, |_| Ok(()))
}

/// Runs `epochs x batches x episodes_per_batch` episodes, updating the
/// policy (and, in learned mode, the topology distribution) after every
/// batch, and calls `on_epoch` with each epoch's metrics.
///
/// Episode seeds depend only on the run seed and the episode's position, and
/// gradients are reduced in episode order, so results do not depend on the
/// size of the rayon pool the call runs in.
pub fn train_with<F>(config: &TrainConfig, mut on_epoch: F) -> Result<TrainOutcome>
where
    F: FnMut(&EpochReport<'_>) -> Result<()>,
{
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[TAG_INIT]));
    let mut policy = PolicySet::new(config, &mut rng)?;
    let mut optim = PolicyOptim::adam(&policy, config.lr);
    let mut topology = match config.fixed_graph()? {
        Some(g) => Topology::Fixed(g),
        None => Topology::Learned {
            learner: TopoLearner::new(TopoLearnerParams::new(config.env.n_agents, config.topo_temperature)?),
            baseline: None,
        },
    };
    let mut curve = Vec::with_capacity(config.epochs);
    let mut bad_batches = 0;
    for epoch in 0..config.epochs {
        let mut epoch_traces = Vec::with_capacity(config.batches * config.episodes_per_batch);
        let mut loss_sum = 0.0;
        for batch in 0..config.batches {
            let jobs: Vec<(CommGraph, Option<TopoSample>, u64)> = (0..config.episodes_per_batch)
                .map(|i| {
                    let pos = [epoch as u64, batch as u64, i as u64];
                    let seed = derive_seed(config.seed, &[TAG_EPISODE, pos[0], pos[1], pos[2]]);
                    Ok(match &topology {
                        Topology::Fixed(g) => (g.clone(), None, seed),
                        Topology::Learned { learner, .. } => {
                            let s = sample_topology(&learner.params, derive_seed(config.seed, &[TAG_TOPOLOGY, pos[0], pos[1], pos[2]]))?;
                            (CommGraph::Dag(s.dag.clone()), Some(s), seed)
                        }
                    })
                })
                .collect::<Result<_>>()?;
            let policy_ref = &policy;
            let traces: Vec<EpisodeTrace> = jobs
                .into_par_iter()
                .enumerate()
                .map(|(i, (graph, sample, seed))| rollout(policy_ref, &config.env, &graph, sample, seed, ActionMode::Sample, i))
                .collect::<Result<_>>()?;
            match compute_loss(&policy, &traces, config) {
                Ok((loss, mut grads)) => {
                    let norm = grads.sum_squares().sqrt();
                    if config.grad_clip > 0.0 && norm > config.grad_clip {
                        grads.scale(config.grad_clip / norm);
                    }
                    optim.step(&mut policy, &grads)?;
                    loss_sum += loss.total;
                    bad_batches = 0;
                }
                Err(Error::Numeric(msg)) => {
                    bad_batches += 1;
                    if bad_batches >= MAX_BAD_BATCHES {
                        return Err(Error::Numeric(format!("training aborted at epoch {epoch}: {msg}")));
                    }
                }
                Err(e) => return Err(e),
            }
            if let Topology::Learned { learner, baseline } = &mut topology {
                let batch: Vec<(TopoSample, f64)> = traces
                    .iter()
                    .map(|t| {
                        let reward = t.total_reward - config.edge_cost * t.ledger.total() as f64;
                        (t.sample.clone().expect("learned mode records samples"), reward)
                    })
                    .collect();
                let mean = batch.iter().map(|(_, r)| r).sum::<f64>() / batch.len() as f64;
                let b = *baseline.get_or_insert(mean);
                learner.learner_update(&batch, b, config.topo_lr)?;
                *baseline = Some(BASELINE_DECAY * b + (1.0 - BASELINE_DECAY) * mean);
            }
            epoch_traces.extend(traces);
        }
        let mut record = batch_metrics(&epoch_traces)?;
        record.epoch = epoch + 1;
        record.loss = loss_sum / config.batches as f64;
        on_epoch(&EpochReport {
            record: &record,
            policy: &policy,
            learner: topology.params(),
            eval_graph: topology.eval_graph(),
        })?;
        curve.push(record);
    }
    Ok(TrainOutcome {
        eval_graph: topology.eval_graph(),
        learner: topology.params().cloned(),
        policy,
        curve,
    })
}

/// Greedy decentralized evaluation over `n` episodes on a fixed graph.
/// Episode `i` uses seed `derive_seed(seed, [i])`.
pub fn evaluate(
    policy: &PolicySet,
    graph: &CommGraph,
    env: &GridConfig,
    n: usize,
    seed: u64,
) -> Result<(MetricsRecord, Vec<EpisodeTrace>)> {
    if n == 0 {
        return Err(Error::Contract("evaluation needs at least one episode".into()));
    }
    let traces: Vec<EpisodeTrace> = (0..n)
        .into_par_iter()
        .map(|i| rollout(policy, env, graph, None, derive_seed(seed, &[i as u64]), ActionMode::Greedy, i))
        .collect::<Result<_>>()?;
    Ok((batch_metrics(&traces)?, traces))
}

/// A policy restored from disk with the run that produced it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub policy: PolicySet,
    pub learner: Option<TopoLearnerParams>,
    pub graph: CommGraph,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: TrainConfig,
    learner: Option<TopoLearnerParams>,
    graph: CommGraph,
}

pub fn save_checkpoint<W: Write>(
    w: W,
    config: &TrainConfig,
    policy: &PolicySet,
    learner: Option<&TopoLearnerParams>,
    graph: &CommGraph,
) -> Result<()> {
    let meta = serde_json::to_string(&CheckpointMeta {
        config: config.clone(),
        learner: learner.cloned(),
        graph: graph.clone(),
    })?;
    write_checkpoint(w, &policy.nets(), &meta)
}

pub fn load_checkpoint<R: Read>(r: R) -> Result<Checkpoint> {
    let (nets, meta) = read_checkpoint(r)?;
    let meta: CheckpointMeta =
        serde_json::from_str(&meta).map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
    let policy = PolicySet::from_nets(&meta.config.env, meta.config.share_weights, nets)
        .map_err(|e| Error::Format(format!("checkpoint networks: {e}")))?;
    if meta.graph.n() != policy.n_agents() {
        return Err(Error::Format("checkpoint graph does not match the policy".into()));
    }
    Ok(Checkpoint {
        config: meta.config,
        policy,
        learner: meta.learner,
        graph: meta.graph,
    })
}
