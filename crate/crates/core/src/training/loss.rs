use rayon::prelude::*;

use crate::comms::{propagate_backward, LinkGrads};
use crate::error::{Error, Result};
use crate::metrics::{message_entropy, message_entropy_grad, sei, sei_grad};
use crate::numkit::axpy;

use super::config::{LossWeights, TrainConfig};
use super::policy::PolicySet;
use super::rollout::{step_pass, EpisodeTrace};

/// Weighted loss terms of one batch. `iei` and `sei` are the raw indices.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub actor: f64,
    pub value: f64,
    pub entropy: f64,
    pub iei: f64,
    pub sei: f64,
}

/// Discounted per-agent returns `[step][agent]`, cut at terminal steps.
pub fn discounted_returns(trace: &EpisodeTrace, gamma: f64) -> Vec<Vec<f64>> {
    let n = trace.sent.len();
    let mut out = vec![vec![0.0; n]; trace.steps.len()];
    let mut next = vec![0.0; n];
    for (t, step) in trace.steps.iter().enumerate().rev() {
        for a in 0..n {
            let g = step.rewards[a] + if step.terminal[a] { 0.0 } else { gamma * next[a] };
            out[t][a] = g;
            next[a] = g;
        }
    }
    out
}

/// Batch-level constants shared by every episode's pass.
struct BatchPlan {
    returns: Vec<Vec<Vec<f64>>>,
    advantages: Vec<Vec<Vec<f64>>>,
    /// Active agent-steps.
    n_active: f64,
    /// Transmitted payloads.
    n_sent: f64,
    /// Per agent: gradient of the SEI term on each of its payloads.
    sei_payload_grad: Vec<Option<Vec<f64>>>,
    sei_value: f64,
}

fn plan(policy: &PolicySet, traces: &[EpisodeTrace], gamma: f64, weights: &LossWeights) -> Result<BatchPlan> {
    let n = policy.n_agents();
    let returns: Vec<Vec<Vec<f64>>> = traces.iter().map(|t| discounted_returns(t, gamma)).collect();
    let mut raw = Vec::new();
    for (trace, ret) in traces.iter().zip(&returns) {
        for (step, g) in trace.steps.iter().zip(ret) {
            if step.values.len() != n {
                return Err(Error::Contract("trace lacks critic values".into()));
            }
            for a in (0..n).filter(|&a| step.active[a]) {
                raw.push(g[a] - step.values[a]);
            }
        }
    }
    let n_active = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n_active.max(1.0);
    let var = raw.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n_active.max(1.0);
    let std = var.sqrt() + 1e-8;
    let advantages = traces
        .iter()
        .zip(&returns)
        .map(|(trace, ret)| {
            trace
                .steps
                .iter()
                .zip(ret)
                .map(|(step, g)| (0..n).map(|a| if step.active[a] { (g[a] - step.values[a] - mean) / std } else { 0.0 }).collect())
                .collect()
        })
        .collect();
    let n_sent: f64 = traces.iter().map(|t| (t.length * t.sent.iter().filter(|&&s| s).count()) as f64).sum();

    let mut sei_payload_grad = vec![None; n];
    let mut sei_value = 0.0;
    if weights.sei > 0.0 {
        // Payload means are recomputed from the current parameters so the
        // term is an exact function of them.
        let sums: Vec<(Vec<Vec<f64>>, Vec<usize>)> = traces
            .par_iter()
            .map(|trace| payload_sums(policy, trace))
            .collect::<Result<_>>()?;
        let m = policy.message_width();
        let mut total = vec![vec![0.0; m]; n];
        let mut count = vec![0usize; n];
        for (s, c) in &sums {
            for a in 0..n {
                axpy(1.0, &s[a], &mut total[a]);
                count[a] += c[a];
            }
        }
        let senders: Vec<usize> = (0..n).filter(|&a| count[a] > 0).collect();
        if senders.len() >= 2 {
            let means: Vec<Vec<f64>> = senders
                .iter()
                .map(|&a| total[a].iter().map(|v| v / count[a] as f64).collect())
                .collect();
            sei_value = sei(&means)?;
            for (g, &a) in sei_grad(&means)?.into_iter().zip(&senders) {
                sei_payload_grad[a] = Some(g.into_iter().map(|v| weights.sei * v / count[a] as f64).collect());
            }
        }
    }
    Ok(BatchPlan {
        returns,
        advantages,
        n_active,
        n_sent,
        sei_payload_grad,
        sei_value,
    })
}

fn payload_sums(policy: &PolicySet, trace: &EpisodeTrace) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let n = policy.n_agents();
    let mut sums = vec![vec![0.0; policy.message_width()]; n];
    let mut count = vec![0usize; n];
    for step in &trace.steps {
        let pass = step_pass(policy, &trace.graph, &step.observations, &step.active, false, None, |a, _| Ok(step.actions[a]))?;
        for a in (0..n).filter(|&a| trace.sent[a]) {
            axpy(1.0, &pass.comm.payloads[a], &mut sums[a]);
            count[a] += 1;
        }
    }
    Ok((sums, count))
}

struct EpisodeOut {
    actor: f64,
    value: f64,
    entropy: f64,
    entropy_sum: f64,
    grads: Option<PolicySet>,
}

fn episode_pass(
    policy: &PolicySet,
    trace: &EpisodeTrace,
    returns: &[Vec<f64>],
    advantages: &[Vec<f64>],
    plan: &BatchPlan,
    weights: &LossWeights,
    backward: bool,
) -> Result<EpisodeOut> {
    let n = policy.n_agents();
    let h = policy.hidden_width();
    let mut out = EpisodeOut {
        actor: 0.0,
        value: 0.0,
        entropy: 0.0,
        entropy_sum: 0.0,
        grads: backward.then(|| policy.zeros_like()),
    };
    let mut link_grads: Vec<LinkGrads> = policy.slots.iter().map(|s| LinkGrads::zeros_like(s.links())).collect();
    let inv_n = 1.0 / plan.n_active.max(1.0);
    let inv_k = 1.0 / plan.n_sent.max(1.0);
    for (t, step) in trace.steps.iter().enumerate() {
        let pass = step_pass(policy, &trace.graph, &step.observations, &step.active, true, None, |a, _| Ok(step.actions[a]))?;
        let mut d_hidden = vec![vec![0.0; h]; n];
        let mut d_value = vec![0.0; n];
        for a in (0..n).filter(|&a| step.active[a]) {
            let probs = pass.probs(a).expect("active agents run their actor");
            let chosen = step.actions[a];
            let adv = advantages[t][a];
            let p = probs[chosen].max(1e-12);
            out.actor += -weights.actor * adv * p.ln() * inv_n;
            let ent: f64 = -probs.iter().filter(|&&q| q > 0.0).map(|q| q * q.ln()).sum::<f64>();
            out.entropy += -weights.entropy * ent * inv_n;
            let err = pass.values[a] - returns[t][a];
            out.value += weights.value * err * err * inv_n;
            d_value[a] = weights.value * 2.0 * err * inv_n;
            if let Some(grads) = out.grads.as_mut() {
                let mut d_probs: Vec<f64> = probs.iter().map(|&q| weights.entropy * (q.max(1e-12).ln() + 1.0) * inv_n).collect();
                d_probs[chosen] += -weights.actor * adv / p * inv_n;
                let slot = policy.slot_of()[a];
                let cache = pass.actor[a].as_ref().expect("active");
                d_hidden[a] = policy.slots[slot].actor.backward_acc(cache, &d_probs, &mut grads.slots[slot].actor)?;
            }
        }
        let mut d_payload = vec![vec![0.0; policy.message_width()]; n];
        for a in (0..n).filter(|&a| trace.sent[a]) {
            let m = &pass.comm.payloads[a];
            out.entropy_sum += message_entropy(m);
            if backward && weights.iei > 0.0 {
                axpy(weights.iei * inv_k, &message_entropy_grad(m), &mut d_payload[a]);
            }
            if let Some(g) = &plan.sei_payload_grad[a] {
                axpy(1.0, g, &mut d_payload[a]);
            }
        }
        if let Some(grads) = out.grads.as_mut() {
            let d_joint = policy.critic.backward_acc(pass.critic.as_ref().expect("critic ran"), &d_value, &mut grads.critic)?;
            for (d, chunk) in d_hidden.iter_mut().zip(d_joint.chunks(h)) {
                axpy(1.0, chunk, d);
            }
            let d_base = propagate_backward(
                &trace.graph,
                &policy.links(),
                &pass.comm,
                &d_hidden,
                Some(&d_payload),
                &mut link_grads,
                policy.slot_of(),
            )?;
            for a in 0..n {
                let slot = policy.slot_of()[a];
                policy.slots[slot].encoder.backward_acc(&pass.enc[a], &d_base[a], &mut grads.slots[slot].encoder)?;
            }
        }
    }
    if let Some(grads) = out.grads.as_mut() {
        for (slot, lg) in grads.slots.iter_mut().zip(&link_grads) {
            slot.update.add_assign(&lg.update);
            slot.message.add_assign(&lg.message);
        }
    }
    Ok(out)
}

fn run(policy: &PolicySet, traces: &[EpisodeTrace], gamma: f64, weights: &LossWeights, backward: bool) -> Result<(LossBreakdown, Option<PolicySet>)> {
    if traces.is_empty() {
        return Err(Error::Contract("loss over an empty batch".into()));
    }
    let plan = plan(policy, traces, gamma, weights)?;
    let outs: Vec<EpisodeOut> = traces
        .par_iter()
        .enumerate()
        .map(|(i, trace)| episode_pass(policy, trace, &plan.returns[i], &plan.advantages[i], &plan, weights, backward))
        .collect::<Result<_>>()?;
    let mut loss = LossBreakdown {
        sei: plan.sei_value,
        ..LossBreakdown::default()
    };
    let mut grads: Option<PolicySet> = None;
    let mut entropy_sum = 0.0;
    for o in outs {
        loss.actor += o.actor;
        loss.value += o.value;
        loss.entropy += o.entropy;
        entropy_sum += o.entropy_sum;
        if let Some(g) = o.grads {
            match grads.as_mut() {
                Some(acc) => acc.add_assign(&g),
                None => grads = Some(g),
            }
        }
    }
    loss.iei = if plan.n_sent > 0.0 { entropy_sum / plan.n_sent } else { 0.0 };
    loss.total = loss.actor + loss.value + loss.entropy + weights.iei * loss.iei + weights.sei * loss.sei;
    for (name, v) in [
        ("actor", loss.actor),
        ("value", loss.value),
        ("entropy", loss.entropy),
        ("iei", loss.iei),
        ("sei", loss.sei),
    ] {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("{name} loss term is not finite")));
        }
    }
    Ok((loss, grads))
}

/// Batch loss and its gradient with respect to every network.
///
/// Actor term: advantage-weighted negative log-likelihood with per-batch
/// normalized advantages `G - V`; value term: squared error of the critic
/// against the discounted return; minus the policy-entropy bonus; plus the
/// IEI and SEI regularizers, which differentiate into the message heads and
/// everything upstream of them. Per-sample terms are averaged over active
/// agent-steps, IEI over transmitted payloads.
pub fn compute_loss(policy: &PolicySet, traces: &[EpisodeTrace], config: &TrainConfig) -> Result<(LossBreakdown, PolicySet)> {
    compute_loss_weighted(policy, traces, config.gamma, &config.loss_weights())
}

pub fn compute_loss_weighted(
    policy: &PolicySet,
    traces: &[EpisodeTrace],
    gamma: f64,
    weights: &LossWeights,
) -> Result<(LossBreakdown, PolicySet)> {
    let (loss, grads) = run(policy, traces, gamma, weights, true)?;
    Ok((loss, grads.expect("backward requested")))
}

/// The loss of [`compute_loss_weighted`] without gradients.
pub fn loss_value(policy: &PolicySet, traces: &[EpisodeTrace], gamma: f64, weights: &LossWeights) -> Result<LossBreakdown> {
    Ok(run(policy, traces, gamma, weights, false)?.0)
}

/// Finite-difference agreement for one network of a [`PolicySet`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetGradCheck {
    /// Max over parameters of `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_err: f64,
    /// Euclidean norm of the analytic gradient.
    pub grad_norm: f64,
}

/// Compares the analytic loss gradient with central differences of step
/// `eps`, per network in [`PolicySet::nets`] order.
pub fn loss_grad_check(
    policy: &PolicySet,
    traces: &[EpisodeTrace],
    gamma: f64,
    weights: &LossWeights,
    eps: f64,
) -> Result<Vec<NetGradCheck>> {
    let (_, grads) = compute_loss_weighted(policy, traces, gamma, weights)?;
    let base = policy.flat_params();
    let mut probe = policy.clone();
    let mut report = Vec::new();
    let mut offset = 0;
    for g in grads.nets() {
        let analytic = g.flat_params();
        let mut worst: f64 = 0.0;
        for (k, &a) in analytic.iter().enumerate() {
            let mut at = |delta: f64| -> Result<f64> {
                let mut p = base.clone();
                p[offset + k] += delta;
                probe.set_flat_params(&p)?;
                Ok(loss_value(&probe, traces, gamma, weights)?.total)
            };
            let numeric = (at(eps)? - at(-eps)?) / (2.0 * eps);
            worst = worst.max(crate::numkit::relative_error(a, numeric));
        }
        report.push(NetGradCheck {
            max_rel_err: worst,
            grad_norm: analytic.iter().map(|v| v * v).sum::<f64>().sqrt(),
        });
        offset += analytic.len();
    }
    Ok(report)
}
