//! Vectorized 4x4 grid world with a permanent mid-run actuator fault.
//!
//! Eight identical grids advance in lock-step. Observations are 18-dim:
//! a 16-way one-hot of the agent's cell, a binary health flag, and one
//! reserved slot fixed at zero. Reaching the goal pays +1 and resets
//! that grid immediately (auto-reset); episodes also end at `max_len`
//! steps.
//!
//! After `damage_step` global steps the move-right actuator fails in
//! every grid, permanently: Right becomes a no-op and the health flag
//! drops to zero. In the `NoopRightAndMoveGoal` mode the goal also
//! relocates (default to the top-left corner) so the task stays
//! solvable without Right; with the goal in the right column it would
//! not be.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

pub const ACTIONS: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::Up => 0,
            Action::Down => 1,
            Action::Left => 2,
            Action::Right => 3,
        }
    }

    pub fn from_index(i: usize) -> Action {
        ACTIONS[i]
    }
}

/// What the actuator fault does to the world.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DamageMode {
    /// Right becomes a no-op; the goal stays put.
    NoopRight,
    /// Right becomes a no-op, the goal moves to `damage_goal`, and
    /// episodes restart from `damage_start`. Both relocations keep the
    /// task solvable without Right at the original six-move distance.
    NoopRightAndMoveGoal,
}

#[derive(Debug, Clone)]
pub struct EnvConfig {
    pub grid: usize,
    pub start: (usize, usize),
    pub goal: (usize, usize),
    /// Goal position after damage in the move-goal mode.
    pub damage_goal: (usize, usize),
    /// Episode start after damage in the move-goal mode.
    pub damage_start: (usize, usize),
    pub damage_step: u64,
    pub max_len: usize,
    pub damage_mode: DamageMode,
    pub n_envs: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            grid: 4,
            start: (0, 0),
            goal: (3, 3),
            damage_goal: (0, 3),
            damage_start: (3, 0),
            damage_step: 50,
            max_len: 16,
            damage_mode: DamageMode::NoopRightAndMoveGoal,
            n_envs: 8,
        }
    }
}

impl EnvConfig {
    pub fn obs_dim(&self) -> usize {
        self.grid * self.grid + 2
    }

    pub fn validate(&self) -> Result<()> {
        let inside = |p: (usize, usize)| p.0 < self.grid && p.1 < self.grid;
        if self.grid == 0 || self.n_envs == 0 {
            return Err(Error::InvalidConfig("grid and env count must be positive".into()));
        }
        if !inside(self.start)
            || !inside(self.goal)
            || !inside(self.damage_goal)
            || !inside(self.damage_start)
        {
            return Err(Error::InvalidConfig("positions out of bounds".into()));
        }
        Ok(())
    }
}

/// One grid instance.
#[derive(Debug, Clone)]
pub struct GridState {
    pub agent_x: usize,
    pub agent_y: usize,
    pub goal_x: usize,
    pub goal_y: usize,
    pub healthy: bool,
    pub episode_step: usize,
    /// Completed global step calls; never resets.
    pub global_step: u64,
    pub done: bool,
}

impl GridState {
    fn new(cfg: &EnvConfig) -> Self {
        Self {
            agent_x: cfg.start.0,
            agent_y: cfg.start.1,
            goal_x: cfg.goal.0,
            goal_y: cfg.goal.1,
            healthy: true,
            episode_step: 0,
            global_step: 0,
            done: false,
        }
    }

    fn observe(&self, cfg: &EnvConfig) -> Vector {
        let mut obs = Vector::zeros(cfg.obs_dim());
        obs[self.agent_y * cfg.grid + self.agent_x] = 1.0;
        obs[cfg.grid * cfg.grid] = if self.healthy { 1.0 } else { 0.0 };
        // last slot reserved, fixed at zero
        obs
    }

    /// Single-grid transition. Stepping a finished episode without a
    /// reset is a caller error; the vectorized wrapper auto-resets.
    fn step(&mut self, cfg: &EnvConfig, action: Action, idx: usize) -> Result<(f64, bool)> {
        if self.done {
            return Err(Error::SteppedDoneEnv(idx));
        }
        let damaged_move = self.global_step >= cfg.damage_step;
        match action {
            Action::Up => {
                if self.agent_y + 1 < cfg.grid {
                    self.agent_y += 1;
                }
            }
            Action::Down => {
                self.agent_y = self.agent_y.saturating_sub(1);
            }
            Action::Left => {
                self.agent_x = self.agent_x.saturating_sub(1);
            }
            Action::Right => {
                if !damaged_move && self.agent_x + 1 < cfg.grid {
                    self.agent_x += 1;
                }
            }
        }
        self.episode_step += 1;
        self.global_step += 1;
        if self.global_step >= cfg.damage_step {
            self.healthy = false;
            if cfg.damage_mode == DamageMode::NoopRightAndMoveGoal {
                self.goal_x = cfg.damage_goal.0;
                self.goal_y = cfg.damage_goal.1;
            }
        }
        let at_goal = self.agent_x == self.goal_x && self.agent_y == self.goal_y;
        let reward = if at_goal { 1.0 } else { 0.0 };
        let done = at_goal || self.episode_step >= cfg.max_len;
        self.done = done;
        Ok((reward, done))
    }

    fn reset_episode(&mut self, cfg: &EnvConfig) {
        self.episode_step = 0;
        self.done = false;
        // health, start, and goal reflect any damage already applied
        if self.global_step >= cfg.damage_step {
            self.healthy = false;
            if cfg.damage_mode == DamageMode::NoopRightAndMoveGoal {
                self.agent_x = cfg.damage_start.0;
                self.agent_y = cfg.damage_start.1;
                self.goal_x = cfg.damage_goal.0;
                self.goal_y = cfg.damage_goal.1;
                return;
            }
        }
        self.agent_x = cfg.start.0;
        self.agent_y = cfg.start.1;
        self.goal_x = cfg.goal.0;
        self.goal_y = cfg.goal.1;
    }
}

/// The vectorized environment: all grids step together, finished
/// episodes reset in place.
#[derive(Debug, Clone)]
pub struct VecEnv {
    pub cfg: EnvConfig,
    envs: Vec<GridState>,
    #[allow(dead_code)]
    rng: RngStream,
}

/// Result of one vectorized step.
#[derive(Debug, Clone)]
pub struct StepResult {
    /// Observations after the transition (post-reset for done grids).
    pub observations: Vec<Vector>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

impl VecEnv {
    pub fn new(cfg: EnvConfig, rng: RngStream) -> Result<Self> {
        cfg.validate()?;
        let envs = (0..cfg.n_envs).map(|_| GridState::new(&cfg)).collect();
        Ok(Self { cfg, envs, rng })
    }

    pub fn n_envs(&self) -> usize {
        self.envs.len()
    }

    pub fn global_step(&self) -> u64 {
        self.envs[0].global_step
    }

    pub fn damaged(&self) -> bool {
        self.global_step() >= self.cfg.damage_step
    }

    pub fn states(&self) -> &[GridState] {
        &self.envs
    }

    /// Start a fresh episode in every grid; damage, if already applied,
    /// persists. Returns the initial observations.
    pub fn reset(&mut self) -> Vec<Vector> {
        for e in self.envs.iter_mut() {
            e.reset_episode(&self.cfg);
        }
        self.envs.iter().map(|e| e.observe(&self.cfg)).collect()
    }

    /// Advance every grid by one action; finished grids reset in place
    /// and report their reset observation.
    pub fn step(&mut self, actions: &[Action]) -> Result<StepResult> {
        if actions.len() != self.envs.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} actions, got {}",
                self.envs.len(),
                actions.len()
            )));
        }
        let mut rewards = Vec::with_capacity(self.envs.len());
        let mut dones = Vec::with_capacity(self.envs.len());
        for (i, (env, &a)) in self.envs.iter_mut().zip(actions.iter()).enumerate() {
            let (r, d) = env.step(&self.cfg, a, i)?;
            rewards.push(r);
            dones.push(d);
            if d {
                env.reset_episode(&self.cfg);
            }
        }
        let observations = self.envs.iter().map(|e| e.observe(&self.cfg)).collect();
        Ok(StepResult {
            observations,
            rewards,
            dones,
        })
    }
}

/// Best achievable undiscounted episode return, by shortest-path search
/// under the given actuator condition. With the sparse +1 goal reward
/// this is 1 when the goal is reachable within `max_len` moves, else 0.
pub fn optimal_return(cfg: &EnvConfig, damaged: bool) -> f64 {
    if cfg.max_len == 0 {
        return 0.0;
    }
    let moved = damaged && cfg.damage_mode == DamageMode::NoopRightAndMoveGoal;
    let goal = if moved { cfg.damage_goal } else { cfg.goal };
    let start = if moved { cfg.damage_start } else { cfg.start };
    if start == goal {
        return 1.0;
    }
    // breadth-first search over cells
    let n = cfg.grid;
    let mut dist = vec![usize::MAX; n * n];
    let mut queue = std::collections::VecDeque::new();
    dist[start.1 * n + start.0] = 0;
    queue.push_back(start);
    while let Some((x, y)) = queue.pop_front() {
        let d = dist[y * n + x];
        let mut neighbors = vec![];
        if y + 1 < n {
            neighbors.push((x, y + 1));
        }
        if y > 0 {
            neighbors.push((x, y - 1));
        }
        if x > 0 {
            neighbors.push((x - 1, y));
        }
        if !damaged && x + 1 < n {
            neighbors.push((x + 1, y));
        }
        for (nx, ny) in neighbors {
            if dist[ny * n + nx] == usize::MAX {
                dist[ny * n + nx] = d + 1;
                if (nx, ny) == goal {
                    return if d + 1 <= cfg.max_len { 1.0 } else { 0.0 };
                }
                queue.push_back((nx, ny));
            }
        }
    }
    0.0
}
