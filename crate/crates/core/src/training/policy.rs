use rand::Rng;

use crate::comms::AgentLinks;
use crate::envs::GridConfig;
use crate::error::{contract, Error, Result};
use crate::numkit::{optim_step, Activation, Mlp, OptimKind, OptimState};

use super::config::TrainConfig;

/// Networks of one parameter slot (a role when weights are shared, an agent otherwise).
#[derive(Clone, Debug, PartialEq)]
pub struct AgentNets {
    /// Observation to base hidden state.
    pub encoder: Mlp,
    /// `[base ‖ aggregate ‖ action summary]` to enriched hidden state.
    pub update: Mlp,
    /// Enriched hidden state to payload.
    pub message: Mlp,
    /// Enriched hidden state to action probabilities.
    pub actor: Mlp,
}

impl AgentNets {
    fn nets(&self) -> [&Mlp; 4] {
        [&self.encoder, &self.update, &self.message, &self.actor]
    }

    fn nets_mut(&mut self) -> [&mut Mlp; 4] {
        [&mut self.encoder, &mut self.update, &mut self.message, &mut self.actor]
    }

    pub fn links(&self) -> AgentLinks<'_> {
        AgentLinks {
            update: &self.update,
            message: &self.message,
        }
    }
}

/// Parameter bundle for all agents plus the centralized critic.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicySet {
    pub slots: Vec<AgentNets>,
    /// Concatenated enriched hiddens of all agents to one value per agent.
    pub critic: Mlp,
    slot_of: Vec<usize>,
    action_counts: Vec<usize>,
    summary_width: usize,
}

/// Number of parameter slots and the agent-to-slot map implied by `config`.
fn slot_layout(env: &GridConfig, share: bool) -> (usize, Vec<usize>) {
    let n = env.n_agents;
    if share {
        (env.n_roles(), (0..n).map(|a| env.role_of(a)).collect())
    } else {
        (n, (0..n).collect())
    }
}

impl PolicySet {
    pub fn new<R: Rng + ?Sized>(config: &TrainConfig, rng: &mut R) -> Result<Self> {
        let env = &config.env;
        let (n_slots, slot_of) = slot_layout(env, config.share_weights);
        let (h, m, a_max) = (config.hidden, config.message_width, env.max_actions());
        let mut slots = Vec::with_capacity(n_slots);
        for s in 0..n_slots {
            let agent = slot_of.iter().position(|&x| x == s).expect("every slot has an agent");
            let actions = env.role_actions(env.role_of(agent));
            slots.push(AgentNets {
                encoder: Mlp::new(&[env.obs_dim(), h], Activation::Tanh, Activation::Tanh, rng)?,
                update: Mlp::new(&[h + m + a_max, h], Activation::Tanh, Activation::Tanh, rng)?,
                message: Mlp::new(&[h, m], Activation::Tanh, Activation::Identity, rng)?,
                actor: Mlp::new(&[h, actions], Activation::Tanh, Activation::Softmax, rng)?,
            });
        }
        let n = env.n_agents;
        let critic = Mlp::new(&[n * h, config.critic_hidden, n], Activation::Tanh, Activation::Identity, rng)?;
        Self::assemble(env, config.share_weights, slots, critic)
    }

    fn assemble(env: &GridConfig, share: bool, slots: Vec<AgentNets>, critic: Mlp) -> Result<Self> {
        let (n_slots, slot_of) = slot_layout(env, share);
        if slots.len() != n_slots {
            return Err(contract(format!("expected {n_slots} parameter slots, got {}", slots.len())));
        }
        let n = env.n_agents;
        let action_counts: Vec<usize> = (0..n).map(|a| env.role_actions(env.role_of(a))).collect();
        let summary_width = env.max_actions();
        let h = slots[0].encoder.output_width();
        let m = slots[0].message.output_width();
        for (agent, &s) in slot_of.iter().enumerate() {
            let nets = &slots[s];
            let ok = nets.encoder.input_width() == env.obs_dim()
                && nets.encoder.output_width() == h
                && nets.update.input_width() == h + m + summary_width
                && nets.update.output_width() == h
                && nets.message.input_width() == h
                && nets.message.output_width() == m
                && nets.actor.input_width() == h
                && nets.actor.output_width() == action_counts[agent];
            if !ok {
                return Err(Error::Dimension(format!("agent {agent}: networks do not fit the environment")));
            }
        }
        if critic.input_width() != n * h || critic.output_width() != n {
            return Err(Error::Dimension("critic does not fit the agent count".into()));
        }
        Ok(Self {
            slots,
            critic,
            slot_of,
            action_counts,
            summary_width,
        })
    }

    /// Rebuilds a policy from the flat list produced by [`PolicySet::nets`].
    pub fn from_nets(env: &GridConfig, share: bool, mut nets: Vec<Mlp>) -> Result<Self> {
        if nets.is_empty() || nets.len() % 4 != 1 {
            return Err(Error::Format(format!("policy needs 4 networks per slot plus a critic, got {}", nets.len())));
        }
        let critic = nets.pop().expect("non-empty");
        let mut slots = Vec::new();
        let mut it = nets.into_iter();
        while let (Some(encoder), Some(update), Some(message), Some(actor)) = (it.next(), it.next(), it.next(), it.next()) {
            slots.push(AgentNets {
                encoder,
                update,
                message,
                actor,
            });
        }
        Self::assemble(env, share, slots, critic)
    }

    /// Every network in checkpoint order: per slot encoder, update, message,
    /// actor; then the critic.
    pub fn nets(&self) -> Vec<&Mlp> {
        self.slots.iter().flat_map(|s| s.nets()).chain(std::iter::once(&self.critic)).collect()
    }

    fn nets_mut(&mut self) -> Vec<&mut Mlp> {
        self.slots
            .iter_mut()
            .flat_map(|s| s.nets_mut())
            .chain(std::iter::once(&mut self.critic))
            .collect()
    }

    pub fn n_agents(&self) -> usize {
        self.slot_of.len()
    }

    pub fn slot_of(&self) -> &[usize] {
        &self.slot_of
    }

    pub fn agent(&self, agent: usize) -> &AgentNets {
        &self.slots[self.slot_of[agent]]
    }

    pub fn action_count(&self, agent: usize) -> usize {
        self.action_counts[agent]
    }

    pub fn summary_width(&self) -> usize {
        self.summary_width
    }

    pub fn hidden_width(&self) -> usize {
        self.slots[0].encoder.output_width()
    }

    pub fn message_width(&self) -> usize {
        self.slots[0].message.output_width()
    }

    pub fn links(&self) -> Vec<AgentLinks<'_>> {
        (0..self.n_agents()).map(|a| self.agent(a).links()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.nets().iter().map(|n| n.param_count()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.nets_mut().into_iter().for_each(|n| *n = n.zeros_like());
        z
    }

    pub fn add_assign(&mut self, other: &PolicySet) {
        for (a, b) in self.nets_mut().into_iter().zip(other.nets()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.nets_mut().into_iter().for_each(|n| n.scale(factor));
    }

    pub fn sum_squares(&self) -> f64 {
        self.nets().iter().map(|n| n.sum_squares()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.nets().iter().flat_map(|n| n.flat_params()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(contract("flat parameter vector has the wrong length"));
        }
        let mut offset = 0;
        for net in self.nets_mut() {
            let k = net.param_count();
            net.set_flat_params(&flat[offset..offset + k])?;
            offset += k;
        }
        Ok(())
    }
}

/// One optimizer state per network of a [`PolicySet`].
#[derive(Clone, Debug)]
pub struct PolicyOptim {
    states: Vec<OptimState>,
}

impl PolicyOptim {
    pub fn adam(policy: &PolicySet, lr: f64) -> Self {
        Self {
            states: policy.nets().into_iter().map(|n| OptimState::for_mlp(OptimKind::adam(), n, lr)).collect(),
        }
    }

    /// Applies `grads` to `policy`; on error nothing is modified.
    pub fn step(&mut self, policy: &mut PolicySet, grads: &PolicySet) -> Result<()> {
        if let Some(i) = grads.nets().iter().position(|g| g.flat_params().iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric(format!("non-finite gradient in network {i}")));
        }
        for ((net, g), state) in policy.nets_mut().into_iter().zip(grads.nets()).zip(&mut self.states) {
            optim_step(net, g, state)?;
        }
        Ok(())
    }
}
