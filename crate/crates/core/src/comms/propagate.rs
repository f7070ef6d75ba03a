use serde::{Deserialize, Serialize};

use crate::error::{contract, dimension, Result};
use crate::numkit::{axpy, ForwardCache, Mlp};
use crate::topology::Dag;

use super::ledger::{CommLedger, LedgerRecord};

/// Who talks to whom within one environment step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommGraph {
    /// Sequential rounds along DAG edges. An empty DAG means no communication.
    Dag(Dag),
    /// Every agent sends to every other agent in a single simultaneous round,
    /// receivers averaging what they get.
    Broadcast { n: usize },
}

impl CommGraph {
    pub fn n(&self) -> usize {
        match self {
            CommGraph::Dag(d) => d.n(),
            CommGraph::Broadcast { n } => *n,
        }
    }

    pub fn transmissions_per_step(&self) -> usize {
        match self {
            CommGraph::Dag(d) => d.edge_count(),
            CommGraph::Broadcast { n } => n * n.saturating_sub(1),
        }
    }

    /// Whether each agent's payload leaves the agent.
    pub fn senders(&self) -> Vec<bool> {
        match self {
            CommGraph::Dag(d) => (0..d.n()).map(|v| d.out_degree(v) > 0).collect(),
            CommGraph::Broadcast { n } => vec![*n > 1; *n],
        }
    }

    pub fn as_dag(&self) -> Option<&Dag> {
        match self {
            CommGraph::Dag(d) => Some(d),
            CommGraph::Broadcast { .. } => None,
        }
    }
}

/// The per-agent networks used during propagation.
#[derive(Clone, Copy, Debug)]
pub struct AgentLinks<'a> {
    /// Maps `[own hidden ‖ aggregated payload ‖ upstream action summary]` to
    /// the enriched hidden state.
    pub update: &'a Mlp,
    /// Maps the enriched hidden state to the outgoing payload.
    pub message: &'a Mlp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkGrads {
    pub update: Mlp,
    pub message: Mlp,
}

impl LinkGrads {
    pub fn zeros_like(links: AgentLinks<'_>) -> Self {
        Self {
            update: links.update.zeros_like(),
            message: links.message.zeros_like(),
        }
    }
}

#[derive(Clone, Debug)]
struct AgentCache {
    update: ForwardCache,
    message: ForwardCache,
    /// Broadcast only: the pre-communication update pass that feeds the message.
    first_update: Option<ForwardCache>,
}

/// Result of one step of propagation.
#[derive(Clone, Debug)]
pub struct StepComm {
    pub hiddens: Vec<Vec<f64>>,
    pub payloads: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    /// Whether the agent's payload was transmitted this step.
    pub sent: Vec<bool>,
    base_width: usize,
    caches: Vec<AgentCache>,
}

struct Widths {
    hidden: usize,
    message: usize,
    action: usize,
}

fn check_shapes(graph: &CommGraph, base: &[Vec<f64>], links: &[AgentLinks<'_>], action_width: usize) -> Result<Widths> {
    let n = graph.n();
    if base.len() != n || links.len() != n {
        return Err(contract(format!(
            "graph has {n} agents, got {} hidden states and {} network sets",
            base.len(),
            links.len()
        )));
    }
    let hidden = base.first().map_or(0, Vec::len);
    let message = links.first().map_or(0, |l| l.message.output_width());
    for (v, (b, l)) in base.iter().zip(links).enumerate() {
        if b.len() != hidden
            || l.message.output_width() != message
            || l.update.input_width() != hidden + message + action_width
            || l.update.output_width() != l.message.input_width()
        {
            return Err(dimension(format!("agent {v}: hidden, message and update widths do not compose")));
        }
    }
    Ok(Widths {
        hidden,
        message,
        action: action_width,
    })
}

fn concat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

/// Runs one step of communication and action selection.
///
/// In DAG mode agents are visited round by round. Each agent averages the
/// payloads of its in-neighbours (already produced, since they sit in earlier
/// rounds), mean-pools their one-hot actions, runs its update network on
/// `[base ‖ aggregate ‖ action summary]`, chooses its action through `act`,
/// and only then emits its own payload. Round-0 agents see zero aggregates.
///
/// In broadcast mode every agent first emits a payload from its
/// communication-free hidden state, then all agents update on the mean of the
/// others' payloads and act simultaneously; no actions are shared.
///
/// When `ledger` is given, one record per traversed edge is appended with the
/// supplied `(episode, step)` stamp.
pub fn propagate<F>(
    graph: &CommGraph,
    base: &[Vec<f64>],
    links: &[AgentLinks<'_>],
    action_width: usize,
    mut ledger: Option<(&mut CommLedger, usize, usize)>,
    mut act: F,
) -> Result<StepComm>
where
    F: FnMut(usize, &[f64]) -> Result<usize>,
{
    let w = check_shapes(graph, base, links, action_width)?;
    let n = graph.n();
    let mut hiddens = vec![Vec::new(); n];
    let mut payloads = vec![Vec::new(); n];
    let mut actions = vec![usize::MAX; n];
    let mut caches: Vec<Option<AgentCache>> = vec![None; n];
    let mut log = |round: usize, sender: usize, receiver: usize| {
        if let Some((l, episode, step)) = ledger.as_mut() {
            l.push(LedgerRecord {
                episode: *episode,
                step: *step,
                round,
                sender,
                receiver,
            });
        }
    };
    let zeros_m = vec![0.0; w.message];
    let zeros_a = vec![0.0; w.action];
    match graph {
        CommGraph::Dag(dag) => {
            for v in dag.schedule() {
                let ins = dag.in_neighbors(v);
                let mut agg = zeros_m.clone();
                let mut summary = zeros_a.clone();
                if !ins.is_empty() {
                    let k = ins.len() as f64;
                    for &u in ins {
                        axpy(1.0 / k, &payloads[u], &mut agg);
                        summary[actions[u]] += 1.0 / k;
                        log(dag.round_of()[v], u, v);
                    }
                }
                let input = concat(&[&base[v], &agg, &summary]);
                let (h, update) = links[v].update.forward(&input)?;
                let a = act(v, &h)?;
                if a >= w.action {
                    return Err(contract(format!("agent {v}: action {a} outside summary width {}", w.action)));
                }
                let (m, message) = links[v].message.forward(&h)?;
                actions[v] = a;
                hiddens[v] = h;
                payloads[v] = m;
                caches[v] = Some(AgentCache {
                    update,
                    message,
                    first_update: None,
                });
            }
        }
        CommGraph::Broadcast { .. } => {
            let mut first = Vec::with_capacity(n);
            for v in 0..n {
                let input = concat(&[&base[v], &zeros_m, &zeros_a]);
                let (h0, first_update) = links[v].update.forward(&input)?;
                let (m, message) = links[v].message.forward(&h0)?;
                payloads[v] = m;
                first.push((first_update, message));
            }
            for (v, (first_update, message)) in first.into_iter().enumerate() {
                let mut agg = zeros_m.clone();
                if n > 1 {
                    for u in (0..n).filter(|&u| u != v) {
                        axpy(1.0 / (n - 1) as f64, &payloads[u], &mut agg);
                        log(1, u, v);
                    }
                }
                let input = concat(&[&base[v], &agg, &zeros_a]);
                let (h, update) = links[v].update.forward(&input)?;
                let a = act(v, &h)?;
                if a >= w.action {
                    return Err(contract(format!("agent {v}: action {a} outside summary width {}", w.action)));
                }
                actions[v] = a;
                hiddens[v] = h;
                caches[v] = Some(AgentCache {
                    update,
                    message,
                    first_update: Some(first_update),
                });
            }
        }
    }
    Ok(StepComm {
        hiddens,
        payloads,
        actions,
        sent: graph.senders(),
        base_width: w.hidden,
        caches: caches.into_iter().map(|c| c.expect("every agent visited")).collect(),
    })
}

/// Backpropagates through one step of [`propagate`].
///
/// `d_hidden[v]` is the loss gradient on agent `v`'s enriched hidden state and
/// `d_payload[v]` (optional) a direct gradient on its payload. Network
/// gradients are added into `grads[slot_of[v]]`. Returns the gradient on each
/// agent's base hidden state.
pub fn propagate_backward(
    graph: &CommGraph,
    links: &[AgentLinks<'_>],
    comm: &StepComm,
    d_hidden: &[Vec<f64>],
    d_payload: Option<&[Vec<f64>]>,
    grads: &mut [LinkGrads],
    slot_of: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let n = graph.n();
    if links.len() != n || d_hidden.len() != n || slot_of.len() != n || comm.hiddens.len() != n {
        return Err(contract("propagation backward called with mismatched agent counts"));
    }
    let hidden = comm.base_width;
    let m_width = links[0].message.output_width();
    let mut d_msg: Vec<Vec<f64>> = match d_payload {
        Some(d) => d.to_vec(),
        None => vec![vec![0.0; m_width]; n],
    };
    let mut d_base = vec![vec![0.0; hidden]; n];
    match graph {
        CommGraph::Dag(dag) => {
            for v in dag.schedule().into_iter().rev() {
                let g = &mut grads[slot_of[v]];
                let cache = &comm.caches[v];
                let mut dh = d_hidden[v].clone();
                if d_msg[v].iter().any(|&x| x != 0.0) {
                    let back = links[v].message.backward_acc(&cache.message, &d_msg[v], &mut g.message)?;
                    axpy(1.0, &back, &mut dh);
                }
                let du = links[v].update.backward_acc(&cache.update, &dh, &mut g.update)?;
                d_base[v].copy_from_slice(&du[..hidden]);
                let ins = dag.in_neighbors(v);
                let d_agg = &du[hidden..hidden + m_width];
                for &u in ins {
                    axpy(1.0 / ins.len() as f64, d_agg, &mut d_msg[u]);
                }
            }
        }
        CommGraph::Broadcast { .. } => {
            for v in 0..n {
                let g = &mut grads[slot_of[v]];
                let du = links[v].update.backward_acc(&comm.caches[v].update, &d_hidden[v], &mut g.update)?;
                axpy(1.0, &du[..hidden], &mut d_base[v]);
                if n > 1 {
                    let d_agg = du[hidden..hidden + m_width].to_vec();
                    for u in (0..n).filter(|&u| u != v) {
                        axpy(1.0 / (n - 1) as f64, &d_agg, &mut d_msg[u]);
                    }
                }
            }
            for v in 0..n {
                let g = &mut grads[slot_of[v]];
                let cache = &comm.caches[v];
                let dh0 = links[v].message.backward_acc(&cache.message, &d_msg[v], &mut g.message)?;
                let first = cache.first_update.as_ref().expect("broadcast caches the first pass");
                let du0 = links[v].update.backward_acc(first, &dh0, &mut g.update)?;
                axpy(1.0, &du0[..hidden], &mut d_base[v]);
            }
        }
    }
    Ok(d_base)
}
