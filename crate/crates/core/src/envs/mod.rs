//! Episodic multi-agent grid worlds: Predator-Prey (PP), Predator-Capture-Prey
//! (PCP) and Traffic Junction (TJ).

mod hunt;
mod traffic;

use serde::{Deserialize, Serialize};

pub use hunt::HuntEnv;
pub use traffic::{TrafficEnv, ROUTE_COUNT};

use crate::error::{contract, Result};

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;
pub const STAY: usize = 4;
/// Only available to PCP capture-role agents.
pub const CAPTURE: usize = 5;

pub const GAS: usize = 0;
pub const BRAKE: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Pp,
    Pcp,
    Tj,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Pp => "pp",
            EnvKind::Pcp => "pcp",
            EnvKind::Tj => "tj",
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pp" => Ok(EnvKind::Pp),
            "pcp" => Ok(EnvKind::Pcp),
            "tj" => Ok(EnvKind::Tj),
            other => Err(format!("unknown environment '{other}' (expected pp, pcp or tj)")),
        }
    }
}

/// Static environment parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub kind: EnvKind,
    pub grid_size: usize,
    pub n_agents: usize,
    pub vision: usize,
    pub max_steps: usize,
    /// PP/PCP only.
    pub n_prey: usize,
    /// PCP capture-role agents; the remaining agents are predators.
    pub n_capture: usize,
    /// TJ arrival probability per entry point per step.
    pub p_arrive: f64,
    /// TJ cap on simultaneously active cars.
    pub n_max: usize,
}

impl GridConfig {
    pub fn pp() -> Self {
        Self {
            kind: EnvKind::Pp,
            grid_size: 10,
            n_agents: 5,
            vision: 1,
            max_steps: 80,
            n_prey: 1,
            n_capture: 0,
            p_arrive: 0.0,
            n_max: 0,
        }
    }

    pub fn pcp() -> Self {
        Self {
            kind: EnvKind::Pcp,
            n_capture: 2,
            ..Self::pp()
        }
    }

    pub fn tj() -> Self {
        Self {
            kind: EnvKind::Tj,
            grid_size: 7,
            n_agents: 5,
            vision: 1,
            max_steps: 20,
            n_prey: 0,
            n_capture: 0,
            p_arrive: 0.3,
            n_max: 5,
        }
    }

    pub fn for_kind(kind: EnvKind) -> Self {
        match kind {
            EnvKind::Pp => Self::pp(),
            EnvKind::Pcp => Self::pcp(),
            EnvKind::Tj => Self::tj(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 || self.n_agents == 0 || self.grid_size == 0 {
            return Err(contract("grid_size, n_agents and max_steps must be positive"));
        }
        match self.kind {
            EnvKind::Pp | EnvKind::Pcp => {
                if self.n_prey != 1 {
                    return Err(contract("exactly one prey is supported"));
                }
                if self.kind == EnvKind::Pp && self.n_capture != 0 {
                    return Err(contract("PP has no capture-role agents"));
                }
                if self.kind == EnvKind::Pcp && (self.n_capture == 0 || self.n_capture >= self.n_agents) {
                    return Err(contract("PCP needs at least one predator and one capture agent"));
                }
                if self.n_agents + self.n_prey > self.grid_size * self.grid_size {
                    return Err(contract(format!(
                        "{} entities do not fit on a {}x{} grid",
                        self.n_agents + self.n_prey,
                        self.grid_size,
                        self.grid_size
                    )));
                }
            }
            EnvKind::Tj => {
                if self.grid_size < 3 || self.grid_size % 2 == 0 {
                    return Err(contract("TJ needs an odd grid size of at least 3"));
                }
                if !(0.0..=1.0).contains(&self.p_arrive) {
                    return Err(contract("p_arrive must lie in [0, 1]"));
                }
                if self.n_max == 0 || self.n_max > self.n_agents {
                    return Err(contract("n_max must lie in 1..=n_agents"));
                }
            }
        }
        Ok(())
    }

    /// Number of distinct role networks the environment calls for.
    pub fn n_roles(&self) -> usize {
        if self.kind == EnvKind::Pcp {
            2
        } else {
            1
        }
    }

    pub fn role_of(&self, agent: usize) -> usize {
        if self.kind == EnvKind::Pcp && agent >= self.n_agents - self.n_capture {
            1
        } else {
            0
        }
    }

    /// Size of the action set of `role`.
    pub fn role_actions(&self, role: usize) -> usize {
        match (self.kind, role) {
            (EnvKind::Tj, _) => 2,
            (EnvKind::Pcp, 1) => 6,
            _ => 5,
        }
    }

    /// Largest action set across roles.
    pub fn max_actions(&self) -> usize {
        (0..self.n_roles()).map(|r| self.role_actions(r)).max().unwrap_or(0)
    }

    pub fn window_cells(&self) -> usize {
        let w = 2 * self.vision + 1;
        w * w
    }

    pub fn obs_dim(&self) -> usize {
        let cells = self.window_cells();
        match self.kind {
            EnvKind::Pp => hunt::PP_CHANNELS * cells + 2,
            EnvKind::Pcp => hunt::PCP_CHANNELS * cells + 2 + 3,
            EnvKind::Tj => traffic::TJ_CHANNELS * cells + 2 + 2 + ROUTE_COUNT,
        }
    }
}

/// Per-step diagnostics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// TJ: cars involved in a collision this step.
    pub collisions: usize,
    /// PP/PCP: all predators currently share the prey's cell.
    pub prey_caught: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub rewards: Vec<f64>,
    pub done: bool,
    pub success: bool,
    /// The agent's lifetime ended this step (TJ car left the grid). Returns
    /// must not bootstrap across such a step.
    pub terminal: Vec<bool>,
    pub info: StepInfo,
}

/// An environment instance: configuration, entity state, step counter and
/// its own RNG stream. Cloning snapshots the full state.
#[derive(Clone, Debug)]
pub enum Env {
    Hunt(HuntEnv),
    Traffic(TrafficEnv),
}

impl Env {
    pub fn reset(config: &GridConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(match config.kind {
            EnvKind::Pp | EnvKind::Pcp => Env::Hunt(HuntEnv::reset(config.clone(), seed)?),
            EnvKind::Tj => Env::Traffic(TrafficEnv::reset(config.clone(), seed)),
        })
    }

    pub fn config(&self) -> &GridConfig {
        match self {
            Env::Hunt(e) => e.config(),
            Env::Traffic(e) => e.config(),
        }
    }

    pub fn n_agents(&self) -> usize {
        self.config().n_agents
    }

    pub fn obs_dim(&self) -> usize {
        self.config().obs_dim()
    }

    pub fn steps(&self) -> usize {
        match self {
            Env::Hunt(e) => e.steps(),
            Env::Traffic(e) => e.steps(),
        }
    }

    pub fn is_done(&self) -> bool {
        match self {
            Env::Hunt(e) => e.is_done(),
            Env::Traffic(e) => e.is_done(),
        }
    }

    pub fn is_active(&self, agent: usize) -> bool {
        match self {
            Env::Hunt(_) => agent < self.n_agents(),
            Env::Traffic(e) => e.is_active(agent),
        }
    }

    pub fn observe(&self, agent: usize) -> Result<Vec<f64>> {
        if agent >= self.n_agents() || !self.is_active(agent) {
            return Err(contract(format!("agent {agent} is not active")));
        }
        Ok(match self {
            Env::Hunt(e) => e.observe(agent),
            Env::Traffic(e) => e.observe(agent),
        })
    }

    /// Observations of every agent slot; inactive slots observe all zeros.
    pub fn observe_all(&self) -> Vec<Vec<f64>> {
        (0..self.n_agents())
            .map(|a| self.observe(a).unwrap_or_else(|_| vec![0.0; self.obs_dim()]))
            .collect()
    }

    pub fn step(&mut self, joint_action: &[usize]) -> Result<StepResult> {
        if self.is_done() {
            return Err(contract("step called on a finished episode"));
        }
        if joint_action.len() != self.n_agents() {
            return Err(contract(format!(
                "expected {} actions, got {}",
                self.n_agents(),
                joint_action.len()
            )));
        }
        for (agent, &a) in joint_action.iter().enumerate() {
            if self.is_active(agent) {
                let limit = self.config().role_actions(self.config().role_of(agent));
                if a >= limit {
                    return Err(contract(format!(
                        "agent {agent}: action {a} outside its action set of size {limit}"
                    )));
                }
            }
        }
        Ok(match self {
            Env::Hunt(e) => e.step(joint_action),
            Env::Traffic(e) => e.step(joint_action),
        })
    }

    pub fn success(&self) -> bool {
        match self {
            Env::Hunt(e) => e.success(),
            Env::Traffic(e) => e.success(),
        }
    }

    pub fn render_ascii(&self) -> String {
        match self {
            Env::Hunt(e) => e.render_ascii(),
            Env::Traffic(e) => e.render_ascii(),
        }
    }
}

/// Index of channel `ch` at window offset `(dr, dc)` in an observation vector.
pub fn window_index(vision: usize, ch: usize, dr: isize, dc: isize) -> usize {
    let w = 2 * vision + 1;
    let v = vision as isize;
    ch * w * w + ((dr + v) as usize) * w + (dc + v) as usize
}

/// Iterates window offsets row-major together with the absolute cell, if on
/// the grid.
pub(crate) fn window_cells(
    vision: usize,
    grid: usize,
    center: (usize, usize),
) -> impl Iterator<Item = (isize, isize, Option<(usize, usize)>)> {
    let v = vision as isize;
    (-v..=v).flat_map(move |dr| {
        (-v..=v).map(move |dc| {
            let r = center.0 as isize + dr;
            let c = center.1 as isize + dc;
            let inside = r >= 0 && c >= 0 && (r as usize) < grid && (c as usize) < grid;
            (dr, dc, inside.then(|| (r as usize, c as usize)))
        })
    })
}
