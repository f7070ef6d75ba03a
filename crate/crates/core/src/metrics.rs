//! Message-efficiency metrics (IEI, SEI), task metrics and convergence
//! detection.
//!
//! Message entropy treats the normalized absolute values of a payload as a
//! probability distribution over its entries and measures it in nats. IEI is
//! the mean entropy over a set of messages; SEI is the mean pairwise cosine
//! similarity between agents' (time-averaged) messages.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// One row of the per-epoch learning curve.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub success_rate: f64,
    pub avg_steps: f64,
    pub c_comm: f64,
    pub iei: f64,
    pub sei: f64,
    pub loss: f64,
}

impl MetricsRecord {
    /// IEI relative to task performance; `None` when nothing succeeded.
    pub fn iei_per_success(&self) -> Option<f64> {
        (self.success_rate > 0.0).then(|| self.iei / self.success_rate)
    }
}

/// Shannon entropy (nats) of `p_i = |m_i| / sum_j |m_j|`; 0 for an all-zero payload.
pub fn message_entropy(payload: &[f64]) -> f64 {
    let total: f64 = payload.iter().map(|v| v.abs()).sum();
    if total == 0.0 {
        return 0.0;
    }
    -payload
        .iter()
        .map(|v| v.abs() / total)
        .filter(|&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// Gradient of [`message_entropy`] with respect to the payload:
/// `dH/dm_k = -sign(m_k) (ln p_k + H) / S`. Zero entries get a zero
/// subgradient.
pub fn message_entropy_grad(payload: &[f64]) -> Vec<f64> {
    let total: f64 = payload.iter().map(|v| v.abs()).sum();
    if total == 0.0 {
        return vec![0.0; payload.len()];
    }
    let h = message_entropy(payload);
    payload
        .iter()
        .map(|&m| {
            if m == 0.0 {
                0.0
            } else {
                let p = m.abs() / total;
                -m.signum() * (p.ln() + h) / total
            }
        })
        .collect()
}

/// Mean message entropy over a batch of payloads.
pub fn iei<P: AsRef<[f64]>>(messages: &[P]) -> Result<f64> {
    if messages.is_empty() {
        return Err(contract("IEI needs at least one message"));
    }
    Ok(messages.iter().map(|m| message_entropy(m.as_ref())).sum::<f64>() / messages.len() as f64)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Mean cosine similarity over unordered agent pairs. Zero vectors
/// contribute similarity 0.
pub fn sei<P: AsRef<[f64]>>(per_agent: &[P]) -> Result<f64> {
    let n = per_agent.len();
    if n < 2 {
        return Err(contract("SEI needs at least two agents"));
    }
    let width = per_agent[0].as_ref().len();
    if per_agent.iter().any(|m| m.as_ref().len() != width) {
        return Err(contract("SEI payloads have mixed widths"));
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += cosine(per_agent[i].as_ref(), per_agent[j].as_ref());
        }
    }
    Ok(sum / (n * (n - 1) / 2) as f64)
}

/// Gradient of [`sei`] with respect to every agent's payload.
pub fn sei_grad<P: AsRef<[f64]>>(per_agent: &[P]) -> Result<Vec<Vec<f64>>> {
    sei(per_agent)?;
    let n = per_agent.len();
    let pairs = (n * (n - 1) / 2) as f64;
    let norms: Vec<f64> = per_agent
        .iter()
        .map(|m| m.as_ref().iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut grads: Vec<Vec<f64>> = per_agent.iter().map(|m| vec![0.0; m.as_ref().len()]).collect();
    for i in 0..n {
        for j in 0..n {
            if i == j || norms[i] == 0.0 || norms[j] == 0.0 {
                continue;
            }
            let (a, b) = (per_agent[i].as_ref(), per_agent[j].as_ref());
            let c = cosine(a, b);
            // d cos(a, b) / d a = b / (|a||b|) - cos * a / |a|^2
            for k in 0..a.len() {
                grads[i][k] += (b[k] / (norms[i] * norms[j]) - c * a[k] / (norms[i] * norms[i])) / pairs;
            }
        }
    }
    Ok(grads)
}

pub fn success_rate(successes: &[bool]) -> Result<f64> {
    if successes.is_empty() {
        return Err(contract("success rate over zero episodes"));
    }
    Ok(successes.iter().filter(|&&s| s).count() as f64 / successes.len() as f64)
}

/// Mean episode length; failed PP/PCP episodes already have length `max_steps`.
pub fn avg_steps(lengths: &[usize]) -> Result<f64> {
    if lengths.is_empty() {
        return Err(contract("average steps over zero episodes"));
    }
    Ok(lengths.iter().sum::<usize>() as f64 / lengths.len() as f64)
}

/// First epoch (1-based) whose trailing `window`-epoch mean reaches `theta`
/// times the mean of the final `window` epochs.
pub fn convergence_epoch(curve: &[f64], window: usize, theta: f64) -> Option<usize> {
    if window == 0 || curve.len() < window {
        return None;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let target = theta * mean(&curve[curve.len() - window..]);
    (window..=curve.len()).find(|&end| mean(&curve[end - window..end]) >= target)
}
