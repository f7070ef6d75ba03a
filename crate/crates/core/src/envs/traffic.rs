use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{window_cells, window_index, GridConfig, StepInfo, StepResult, GAS};

pub(crate) const TJ_CHANNELS: usize = 3;
pub const ROUTE_COUNT: usize = 4;
pub const COLLISION_PENALTY: f64 = -10.0;
pub const TIME_PENALTY: f64 = -0.01;

/// One car occupying an agent slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Car {
    pub route: usize,
    /// Index into the route's cell list.
    pub progress: usize,
    /// Steps since entry.
    pub tau: u32,
    pub prev_action: Option<usize>,
}

/// Easy Traffic Junction: a west-to-east road along the middle row crossing a
/// north-to-south road along the middle column.
///
/// Routes 0/1 enter from the west and go straight or turn south at the
/// junction; routes 2/3 enter from the north and go straight or turn east.
/// At the end of every step each entry point spawns a car with probability
/// `p_arrive` if fewer than `n_max` cars are active and the entry cell is
/// empty. A car that takes `GAS` on the last cell of its route leaves.
#[derive(Clone, Debug)]
pub struct TrafficEnv {
    config: GridConfig,
    routes: Vec<Vec<(usize, usize)>>,
    cars: Vec<Option<Car>>,
    steps: usize,
    collisions: usize,
    done: bool,
    rng: ChaCha8Rng,
}

fn build_routes(g: usize) -> Vec<Vec<(usize, usize)>> {
    let m = g / 2;
    let west_straight: Vec<_> = (0..g).map(|c| (m, c)).collect();
    let west_south: Vec<_> = (0..=m).map(|c| (m, c)).chain((m + 1..g).map(|r| (r, m))).collect();
    let north_straight: Vec<_> = (0..g).map(|r| (r, m)).collect();
    let north_east: Vec<_> = (0..=m).map(|r| (r, m)).chain((m + 1..g).map(|c| (m, c))).collect();
    vec![west_straight, west_south, north_straight, north_east]
}

impl TrafficEnv {
    pub fn reset(config: GridConfig, seed: u64) -> Self {
        Self {
            routes: build_routes(config.grid_size),
            cars: vec![None; config.n_agents],
            steps: 0,
            collisions: 0,
            done: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
            config,
        }
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

    /// Collided cars counted over the episode so far.
    pub fn collisions(&self) -> usize {
        self.collisions
    }

    pub fn success(&self) -> bool {
        self.done && self.collisions == 0
    }

    pub fn is_active(&self, slot: usize) -> bool {
        self.cars.get(slot).is_some_and(Option::is_some)
    }

    pub fn active_count(&self) -> usize {
        self.cars.iter().flatten().count()
    }

    pub fn cars(&self) -> &[Option<Car>] {
        &self.cars
    }

    pub fn route_cells(&self, route: usize) -> &[(usize, usize)] {
        &self.routes[route]
    }

    pub fn car_cell(&self, car: &Car) -> (usize, usize) {
        self.routes[car.route][car.progress]
    }

    /// Places a car directly; for tests and replays.
    pub fn place_car(&mut self, slot: usize, route: usize, progress: usize, tau: u32) {
        self.cars[slot] = Some(Car {
            route,
            progress,
            tau,
            prev_action: None,
        });
    }

    fn on_road(&self, cell: (usize, usize)) -> bool {
        let m = self.config.grid_size / 2;
        cell.0 == m || cell.1 == m
    }

    pub(crate) fn step(&mut self, actions: &[usize]) -> StepResult {
        let n = self.config.n_agents;
        let mut rewards = vec![0.0; n];
        let mut terminal = vec![false; n];
        let mut before = vec![None; n];
        let mut after = vec![None; n];
        for slot in 0..n {
            let Some(car) = self.cars[slot].as_mut() else { continue };
            before[slot] = Some(self.routes[car.route][car.progress]);
            car.tau += 1;
            car.prev_action = Some(actions[slot]);
            if actions[slot] == GAS {
                car.progress += 1;
            }
            if car.progress >= self.routes[car.route].len() {
                terminal[slot] = true;
            } else {
                after[slot] = Some(self.routes[car.route][car.progress]);
            }
        }
        let mut collided = vec![false; n];
        for a in 0..n {
            for b in a + 1..n {
                let (Some(pa), Some(pb)) = (after[a], after[b]) else { continue };
                let swapped = before[a] == Some(pb) && before[b] == Some(pa);
                if pa == pb || swapped {
                    collided[a] = true;
                    collided[b] = true;
                }
            }
        }
        let step_collisions = collided.iter().filter(|&&c| c).count();
        self.collisions += step_collisions;
        for slot in 0..n {
            if let Some(car) = &self.cars[slot] {
                rewards[slot] = TIME_PENALTY * car.tau as f64;
                if collided[slot] {
                    rewards[slot] += COLLISION_PENALTY;
                }
            }
            if terminal[slot] {
                self.cars[slot] = None;
            }
        }
        self.steps += 1;
        self.done = self.steps >= self.config.max_steps;
        self.spawn_arrivals();
        StepResult {
            rewards,
            done: self.done,
            success: self.success(),
            terminal: if self.done { vec![true; n] } else { terminal },
            info: StepInfo {
                collisions: step_collisions,
                prey_caught: false,
            },
        }
    }

    fn spawn_arrivals(&mut self) {
        for entry in 0..2 {
            // Both draws happen every step so the stream does not depend on
            // the policy.
            let arrives = self.rng.gen::<f64>() < self.config.p_arrive;
            let route = entry * 2 + self.rng.gen_range(0..2);
            if !arrives || self.done || self.active_count() >= self.config.n_max {
                continue;
            }
            let entry_cell = self.routes[route][0];
            let occupied = self.cars.iter().flatten().any(|c| self.routes[c.route][c.progress] == entry_cell);
            if occupied {
                continue;
            }
            if let Some(slot) = self.cars.iter().position(Option::is_none) {
                self.place_car(slot, route, 0, 0);
            }
        }
    }

    /// Window channels `[car, road, wall]` (the observing car is not drawn),
    /// normalized position, previous action one-hot, route one-hot.
    pub(crate) fn observe(&self, slot: usize) -> Vec<f64> {
        let cfg = &self.config;
        let car = self.cars[slot].as_ref().expect("caller checked activity");
        let me = self.car_cell(car);
        let mut obs = vec![0.0; cfg.obs_dim()];
        for (dr, dc, cell) in window_cells(cfg.vision, cfg.grid_size, me) {
            let Some(cell) = cell else {
                obs[window_index(cfg.vision, 2, dr, dc)] = 1.0;
                continue;
            };
            if self.on_road(cell) {
                obs[window_index(cfg.vision, 1, dr, dc)] = 1.0;
            }
            let occupied = self
                .cars
                .iter()
                .enumerate()
                .any(|(o, c)| o != slot && c.as_ref().is_some_and(|c| self.car_cell(c) == cell));
            if occupied {
                obs[window_index(cfg.vision, 0, dr, dc)] = 1.0;
            }
        }
        let base = TJ_CHANNELS * cfg.window_cells();
        let scale = (cfg.grid_size - 1) as f64;
        obs[base] = me.0 as f64 / scale;
        obs[base + 1] = me.1 as f64 / scale;
        if let Some(a) = car.prev_action {
            obs[base + 2 + a] = 1.0;
        }
        obs[base + 4 + car.route] = 1.0;
        obs
    }

    pub fn render_ascii(&self) -> String {
        let g = self.config.grid_size;
        let mut rows: Vec<Vec<char>> = (0..g)
            .map(|r| (0..g).map(|c| if self.on_road((r, c)) { '+' } else { ' ' }).collect())
            .collect();
        for (slot, car) in self.cars.iter().enumerate() {
            if let Some(car) = car {
                let (r, c) = self.car_cell(car);
                rows[r][c] = if rows[r][c].is_ascii_digit() { 'X' } else { char::from_digit(slot as u32 % 10, 10).unwrap_or('c') };
            }
        }
        rows.into_iter().map(|r| r.into_iter().collect::<String>() + "\n").collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Env, BRAKE};

    fn quiet() -> GridConfig {
        GridConfig {
            p_arrive: 0.0,
            ..GridConfig::tj()
        }
    }

    #[test]
    fn routes_have_seven_cells_and_share_the_junction() {
        let env = TrafficEnv::reset(GridConfig::tj(), 0);
        for r in 0..ROUTE_COUNT {
            assert_eq!(env.route_cells(r).len(), 7);
            assert!(env.route_cells(r).contains(&(3, 3)));
        }
        assert_eq!(env.route_cells(1)[4], (4, 3));
        assert_eq!(env.route_cells(3)[4], (3, 4));
    }

    #[test]
    fn reset_starts_empty() {
        let env = TrafficEnv::reset(GridConfig::tj(), 5);
        assert_eq!(env.active_count(), 0);
        assert_eq!(env.collisions(), 0);
    }

    #[test]
    fn junction_collision_penalizes_both() {
        let mut env = TrafficEnv::reset(quiet(), 0);
        env.place_car(0, 0, 2, 2); // west road, one cell before the junction
        env.place_car(1, 2, 2, 4); // north road, one cell before the junction
        let res = env.step(&[GAS, GAS, GAS, GAS, GAS]);
        assert_eq!(res.info.collisions, 2);
        assert!((res.rewards[0] - (-10.0 - 0.03)).abs() < 1e-12);
        assert!((res.rewards[1] - (-10.0 - 0.05)).abs() < 1e-12);
        assert_eq!(&res.rewards[2..], &[0.0, 0.0, 0.0]);
        let mut env = Env::Traffic(env);
        while !env.is_done() {
            env.step(&[BRAKE; 5]).unwrap();
        }
        assert!(!env.success());
        assert_eq!(env.steps(), 20);
    }

    #[test]
    fn lone_car_time_penalty() {
        let mut env = TrafficEnv::reset(quiet(), 0);
        env.place_car(0, 0, 0, 2);
        let res = env.step(&[GAS; 5]);
        assert!((res.rewards[0] - (-0.03)).abs() < 1e-12);
        assert_eq!(res.info.collisions, 0);
    }

    #[test]
    fn rear_end_collision() {
        let mut env = TrafficEnv::reset(quiet(), 0);
        env.place_car(0, 0, 2, 1);
        env.place_car(1, 0, 1, 1);
        let res = env.step(&[BRAKE, GAS, GAS, GAS, GAS]);
        assert_eq!(res.info.collisions, 2);
    }

    #[test]
    fn car_exits_after_last_cell() {
        let mut env = TrafficEnv::reset(quiet(), 0);
        env.place_car(0, 2, 6, 6);
        let res = env.step(&[GAS; 5]);
        assert!(res.terminal[0]);
        assert!(!env.is_active(0));
        assert!((res.rewards[0] + 0.07).abs() < 1e-12);
    }

    #[test]
    fn arrivals_respect_cap() {
        let cfg = GridConfig {
            p_arrive: 1.0,
            ..GridConfig::tj()
        };
        let mut env = Env::reset(&cfg, 9).unwrap();
        let mut max_active = 0;
        while !env.is_done() {
            env.step(&[BRAKE; 5]).unwrap();
            if let Env::Traffic(t) = &env {
                max_active = max_active.max(t.active_count());
            }
        }
        assert!(max_active <= 5);
        assert_eq!(env.steps(), 20);
    }

    #[test]
    fn observation_layout() {
        let mut env = TrafficEnv::reset(quiet(), 0);
        env.place_car(0, 0, 2, 1);
        env.place_car(1, 2, 2, 1);
        let obs = env.observe(0);
        assert_eq!(obs.len(), 35);
        // car 1 at (2,3) is up-right of car 0 at (3,2)
        assert_eq!(obs[window_index(1, 0, -1, 1)], 1.0);
        assert_eq!(obs[..9].iter().sum::<f64>(), 1.0);
        assert_eq!(obs[window_index(1, 1, 0, 0)], 1.0);
        assert_eq!(obs[window_index(1, 1, -1, -1)], 0.0);
        assert_eq!(&obs[27..], &[0.5, 2.0 / 6.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert!(obs.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
