use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dag::{AdjMatrix, Dag};
use crate::error::{contract, Result};
use crate::numkit::{OptimKind, OptimState};

/// Parameters of the topology distribution.
///
/// A total order over agents is drawn by perturbing `priorities / temperature`
/// with Gumbel noise and sorting descending (a Plackett-Luce draw). Each pair
/// `i` before `j` in that order then carries edge `i -> j` with probability
/// `sigmoid(edge_logits[i * n + j])`. Samples are acyclic by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopoLearnerParams {
    pub priorities: Vec<f64>,
    /// Row-major `n x n`; the diagonal is unused.
    pub edge_logits: Vec<f64>,
    pub temperature: f64,
}

/// One sampled topology together with the order it was drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct TopoSample {
    pub dag: Dag,
    pub order: Vec<usize>,
    pub log_prob: f64,
}

impl TopoLearnerParams {
    pub fn new(n: usize, temperature: f64) -> Result<Self> {
        if n < 2 {
            return Err(contract("topology learning needs at least two agents"));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(contract(format!("temperature must be positive, got {temperature}")));
        }
        Ok(Self {
            priorities: vec![0.0; n],
            edge_logits: vec![0.0; n * n],
            temperature,
        })
    }

    pub fn n(&self) -> usize {
        self.priorities.len()
    }

    pub fn edge_logit(&self, i: usize, j: usize) -> f64 {
        self.edge_logits[i * self.n() + j]
    }

    pub fn set_edge_logit(&mut self, i: usize, j: usize, v: f64) {
        let n = self.n();
        self.edge_logits[i * n + j] = v;
    }

    pub fn param_count(&self) -> usize {
        self.priorities.len() + self.edge_logits.len()
    }

    /// Most probable structure: priorities sorted descending (lower index
    /// first on ties), forward edges with positive logit.
    pub fn mode(&self) -> Dag {
        let order = argsort_desc(&self.priorities);
        let n = self.n();
        let mut adj = AdjMatrix::empty(n);
        for (a, &i) in order.iter().enumerate() {
            for &j in &order[a + 1..] {
                if self.edge_logit(i, j) > 0.0 {
                    adj.set(i, j, true);
                }
            }
        }
        Dag::new(adj).expect("forward edges of a total order are acyclic")
    }

    /// Joint log-probability of drawing `order` and then exactly the edges of `dag`.
    pub fn log_prob(&self, order: &[usize], dag: &Dag) -> f64 {
        let scores = self.scores();
        let mut lp = 0.0;
        for k in 0..order.len() {
            lp += scores[order[k]] - log_sum_exp(order[k..].iter().map(|&v| scores[v]));
        }
        for (a, &i) in order.iter().enumerate() {
            for &j in &order[a + 1..] {
                let e = self.edge_logit(i, j);
                lp += if dag.has_edge(i, j) { log_sigmoid(e) } else { log_sigmoid(-e) };
            }
        }
        lp
    }

    /// Gradient of [`TopoLearnerParams::log_prob`] as `(d priorities, d edge_logits)`.
    pub fn grad_log_prob(&self, order: &[usize], dag: &Dag) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        let scores = self.scores();
        let mut d_scores = vec![0.0; n];
        for k in 0..order.len() {
            d_scores[order[k]] += 1.0;
            let lse = log_sum_exp(order[k..].iter().map(|&v| scores[v]));
            for &v in &order[k..] {
                d_scores[v] -= (scores[v] - lse).exp();
            }
        }
        let d_prio = d_scores.iter().map(|g| g / self.temperature).collect();
        let mut d_edges = vec![0.0; n * n];
        for (a, &i) in order.iter().enumerate() {
            for &j in &order[a + 1..] {
                let p = sigmoid(self.edge_logit(i, j));
                d_edges[i * n + j] = if dag.has_edge(i, j) { 1.0 - p } else { -p };
            }
        }
        (d_prio, d_edges)
    }

    fn scores(&self) -> Vec<f64> {
        self.priorities.iter().map(|p| p / self.temperature).collect()
    }
}

/// Draws a topology from the learner's distribution.
pub fn sample_topology(params: &TopoLearnerParams, seed: u64) -> Result<TopoSample> {
    let n = params.n();
    if n < 2 {
        return Err(contract("topology learning needs at least two agents"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys: Vec<f64> = params
        .priorities
        .iter()
        .map(|p| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            p / params.temperature - (-u.ln()).ln()
        })
        .collect();
    let order = argsort_desc(&keys);
    let mut adj = AdjMatrix::empty(n);
    for (a, &i) in order.iter().enumerate() {
        for &j in &order[a + 1..] {
            if rng.gen::<f64>() < sigmoid(params.edge_logit(i, j)) {
                adj.set(i, j, true);
            }
        }
    }
    let dag = Dag::new(adj)?;
    let log_prob = params.log_prob(&order, &dag);
    Ok(TopoSample { dag, order, log_prob })
}

/// Topology parameters plus the optimizer that trains them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopoLearner {
    pub params: TopoLearnerParams,
    optim: OptimState,
}

impl TopoLearner {
    pub fn new(params: TopoLearnerParams) -> Self {
        let optim = OptimState::new(OptimKind::adam(), params.param_count(), 1e-3);
        Self { params, optim }
    }

    /// Score-function step: ascends `mean((R - baseline) * grad log p)`.
    pub fn learner_update(&mut self, batch: &[(TopoSample, f64)], baseline: f64, lr: f64) -> Result<()> {
        if batch.is_empty() {
            return Err(contract("topology update needs at least one sample"));
        }
        let n = self.params.n();
        let mut grad = vec![0.0; self.params.param_count()];
        for (sample, ret) in batch {
            let adv = ret - baseline;
            if adv == 0.0 {
                continue;
            }
            let (dp, de) = self.params.grad_log_prob(&sample.order, &sample.dag);
            for (g, d) in grad.iter_mut().zip(dp.iter().chain(&de)) {
                *g -= adv * d / batch.len() as f64;
            }
        }
        self.optim.lr = lr;
        let mut flat: Vec<f64> = self
            .params
            .priorities
            .iter()
            .chain(&self.params.edge_logits)
            .copied()
            .collect();
        self.optim.step_slice(&mut flat, &grad)?;
        self.params.priorities.copy_from_slice(&flat[..n]);
        self.params.edge_logits.copy_from_slice(&flat[n..]);
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    // -softplus(-x)
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Indices sorted by descending value; equal values keep ascending index.
fn argsort_desc(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}
