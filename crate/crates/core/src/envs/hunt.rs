use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{window_cells, window_index, EnvKind, GridConfig, StepInfo, StepResult, CAPTURE, DOWN, LEFT, RIGHT, UP};
use crate::error::{contract, Result};

pub(crate) const PP_CHANNELS: usize = 3;
pub(crate) const PCP_CHANNELS: usize = 4;

pub const STEP_PENALTY: f64 = -0.05;
pub const MISSED_CAPTURE_PENALTY: f64 = -0.05;
pub const SUCCESS_BONUS: f64 = 5.0;

/// Predator-Prey and Predator-Capture-Prey.
///
/// Agents move on the grid and may share cells. In PP the prey is
/// stationary. In PCP the prey steps to a uniformly chosen free neighbouring
/// cell each step unless a predator stands on it. Success requires every
/// predator on the prey cell and, in PCP, every capture agent to have used
/// `CAPTURE` while standing on it.
#[derive(Clone, Debug)]
pub struct HuntEnv {
    config: GridConfig,
    agents: Vec<(usize, usize)>,
    prey: (usize, usize),
    captured: Vec<bool>,
    steps: usize,
    done: bool,
    success: bool,
    rng: ChaCha8Rng,
}

impl HuntEnv {
    pub fn reset(config: GridConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = config.grid_size;
        let cells: Vec<usize> = (0..g * g).collect();
        let picks: Vec<usize> = cells
            .choose_multiple(&mut rng, config.n_agents + 1)
            .copied()
            .collect();
        let at = |k: usize| (k / g, k % g);
        Ok(Self {
            agents: picks[..config.n_agents].iter().map(|&k| at(k)).collect(),
            prey: at(picks[config.n_agents]),
            captured: vec![false; config.n_agents],
            steps: 0,
            done: false,
            success: false,
            rng,
            config,
        })
    }

    /// Builds a state directly, for tests and replays.
    pub fn from_positions(config: GridConfig, agents: Vec<(usize, usize)>, prey: (usize, usize), seed: u64) -> Result<Self> {
        config.validate()?;
        let g = config.grid_size;
        if agents.len() != config.n_agents || agents.iter().chain([&prey]).any(|&(r, c)| r >= g || c >= g) {
            return Err(contract("positions do not match the configuration"));
        }
        Ok(Self {
            captured: vec![false; config.n_agents],
            agents,
            prey,
            steps: 0,
            done: false,
            success: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
            config,
        })
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn success(&self) -> bool {
        self.success
    }

    pub fn agent_positions(&self) -> &[(usize, usize)] {
        &self.agents
    }

    pub fn prey_position(&self) -> (usize, usize) {
        self.prey
    }

    pub fn captured(&self) -> &[bool] {
        &self.captured
    }

    fn is_capture_role(&self, agent: usize) -> bool {
        self.config.role_of(agent) == 1
    }

    fn settled(&self, agent: usize) -> bool {
        if self.is_capture_role(agent) {
            self.captured[agent]
        } else {
            self.agents[agent] == self.prey
        }
    }

    fn all_predators_on_prey(&self) -> bool {
        (0..self.config.n_agents)
            .filter(|&a| !self.is_capture_role(a))
            .all(|a| self.agents[a] == self.prey)
    }

    fn check_success(&self) -> bool {
        self.all_predators_on_prey() && self.captured.iter().enumerate().all(|(a, &c)| c || !self.is_capture_role(a))
    }

    pub(crate) fn step(&mut self, actions: &[usize]) -> StepResult {
        let n = self.config.n_agents;
        let g = self.config.grid_size;
        let mut rewards = vec![0.0; n];
        for (a, &act) in actions.iter().enumerate() {
            let (r, c) = self.agents[a];
            self.agents[a] = match act {
                UP if r > 0 => (r - 1, c),
                DOWN if r + 1 < g => (r + 1, c),
                LEFT if c > 0 => (r, c - 1),
                RIGHT if c + 1 < g => (r, c + 1),
                _ => (r, c),
            };
        }
        for (a, &act) in actions.iter().enumerate() {
            if act == CAPTURE {
                if self.agents[a] == self.prey {
                    self.captured[a] = true;
                } else {
                    rewards[a] += MISSED_CAPTURE_PENALTY;
                }
            }
        }
        if self.config.kind == EnvKind::Pcp && !self.agents.iter().enumerate().any(|(a, &p)| p == self.prey && !self.is_capture_role(a)) {
            self.move_prey();
        }
        self.steps += 1;
        self.success = self.check_success();
        for (a, r) in rewards.iter_mut().enumerate() {
            if !self.settled(a) {
                *r += STEP_PENALTY;
            }
            if self.success {
                *r += SUCCESS_BONUS;
            }
        }
        self.done = self.success || self.steps >= self.config.max_steps;
        StepResult {
            rewards,
            done: self.done,
            success: self.success,
            terminal: vec![self.done; n],
            info: StepInfo {
                collisions: 0,
                prey_caught: self.all_predators_on_prey(),
            },
        }
    }

    fn move_prey(&mut self) {
        let g = self.config.grid_size as isize;
        let (r, c) = (self.prey.0 as isize, self.prey.1 as isize);
        let free: Vec<(usize, usize)> = [(-1, 0), (1, 0), (0, -1), (0, 1)]
            .iter()
            .map(|(dr, dc)| (r + dr, c + dc))
            .filter(|&(nr, nc)| nr >= 0 && nc >= 0 && nr < g && nc < g)
            .map(|(nr, nc)| (nr as usize, nc as usize))
            .filter(|p| !self.agents.contains(p))
            .collect();
        if !free.is_empty() {
            self.prey = free[self.rng.gen_range(0..free.len())];
        }
    }

    /// Window channels: PP `[agent, prey, wall]`, PCP `[predator, capture
    /// agent, prey, wall]`; the observing agent itself is not drawn. Then
    /// normalized `(row, col)`; PCP appends role one-hot and the capture flag.
    pub(crate) fn observe(&self, agent: usize) -> Vec<f64> {
        let cfg = &self.config;
        let pcp = cfg.kind == EnvKind::Pcp;
        let mut obs = vec![0.0; cfg.obs_dim()];
        let (prey_ch, wall_ch) = if pcp { (2, 3) } else { (1, 2) };
        let blind = pcp && self.is_capture_role(agent);
        for (dr, dc, cell) in window_cells(cfg.vision, cfg.grid_size, self.agents[agent]) {
            let Some(cell) = cell else {
                obs[window_index(cfg.vision, wall_ch, dr, dc)] = 1.0;
                continue;
            };
            for (other, &pos) in self.agents.iter().enumerate() {
                if other != agent && pos == cell {
                    let ch = if pcp && self.is_capture_role(other) { 1 } else { 0 };
                    obs[window_index(cfg.vision, ch, dr, dc)] = 1.0;
                }
            }
            if !blind && cell == self.prey {
                obs[window_index(cfg.vision, prey_ch, dr, dc)] = 1.0;
            }
        }
        let base = (if pcp { PCP_CHANNELS } else { PP_CHANNELS }) * cfg.window_cells();
        let scale = (cfg.grid_size.max(2) - 1) as f64;
        obs[base] = self.agents[agent].0 as f64 / scale;
        obs[base + 1] = self.agents[agent].1 as f64 / scale;
        if pcp {
            obs[base + 2 + cfg.role_of(agent)] = 1.0;
            obs[base + 4] = if self.captured[agent] { 1.0 } else { 0.0 };
        }
        obs
    }

    pub fn render_ascii(&self) -> String {
        let g = self.config.grid_size;
        let mut rows = vec![vec!['.'; g]; g];
        rows[self.prey.0][self.prey.1] = 'P';
        for (a, &(r, c)) in self.agents.iter().enumerate() {
            rows[r][c] = match (rows[r][c], self.is_capture_role(a)) {
                ('P', _) | ('*', _) => '*',
                (_, true) => 'c',
                (_, false) => char::from_digit(a as u32 % 10, 10).unwrap_or('a'),
            };
        }
        rows.into_iter().map(|r| r.into_iter().collect::<String>() + "\n").collect()
    }
}
