//! Run configuration: a TOML file mapped onto the core config structs.
//!
//! Every command resolves its configuration (file plus CLI overrides)
//! and writes the resolved form next to its outputs, so a run can be
//! reproduced from its output directory alone.

use anyhow::{Context, Result};
use riiu_core::agent::{StackConfig, TrainConfig};
use riiu_core::autophi::PhiConfig;
use riiu_core::env::{DamageMode, EnvConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seeds: Vec<u64>,
    pub out_dir: String,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3, 4, 5],
            out_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub episodes: usize,
    pub gamma: f64,
    pub lr: f64,
    pub clip: f64,
    pub phi_bonus_weight: f64,
    pub baseline: bool,
    pub phi_loss_last_layer_only: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            episodes: d.episodes,
            gamma: d.gamma,
            lr: d.lr,
            clip: d.clip,
            phi_bonus_weight: d.phi_bonus_weight,
            baseline: d.baseline,
            phi_loss_last_layer_only: d.phi_loss_last_layer_only,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StackSection {
    pub layers: usize,
    pub h_dim: usize,
    pub mu_dim: usize,
    pub buf_len: usize,
    pub rank: usize,
    pub epsilon: f64,
    pub top_k: usize,
    pub workspace_include_layer1: bool,
    pub meta_enabled: bool,
    pub phi_bonus_enabled: bool,
}

impl Default for StackSection {
    fn default() -> Self {
        let d = StackConfig::standard();
        Self {
            layers: d.n_layers,
            h_dim: d.h_dim,
            mu_dim: d.mu_dim,
            buf_len: d.buf_len,
            rank: d.phi.rank,
            epsilon: d.phi.epsilon,
            top_k: d.top_k,
            workspace_include_layer1: d.workspace_include_layer1,
            meta_enabled: d.meta_enabled,
            phi_bonus_enabled: d.phi_bonus_enabled,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub grid: usize,
    pub start: [usize; 2],
    pub goal: [usize; 2],
    pub damage_goal: [usize; 2],
    pub damage_start: [usize; 2],
    pub damage_step: u64,
    pub max_len: usize,
    /// `noop-right` or `noop-right-and-move-goal`.
    pub damage_mode: String,
    pub n_envs: usize,
}

impl Default for EnvSection {
    fn default() -> Self {
        let d = EnvConfig::default();
        Self {
            grid: d.grid,
            start: [d.start.0, d.start.1],
            goal: [d.goal.0, d.goal.1],
            damage_goal: [d.damage_goal.0, d.damage_goal.1],
            damage_start: [d.damage_start.0, d.damage_start.1],
            damage_step: d.damage_step,
            max_len: d.max_len,
            damage_mode: "noop-right-and-move-goal".into(),
            n_envs: d.n_envs,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    /// Trailing smoothing width for the step-level repair latency.
    pub smoothing_window_steps: usize,
    /// Steps before damage that define the pre-damage level.
    pub pre_window_steps: usize,
    /// Consecutive episodes required at target for the recovery
    /// latency used by the meta ablation.
    pub recovery_window_episodes: usize,
    /// Fraction of the optimal return that counts as recovered.
    pub recovery_target_fraction: f64,
    /// Episode range treated as the late phase, inclusive lower bound.
    pub late_phase_from_episode: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            smoothing_window_steps: 5,
            pre_window_steps: 200,
            recovery_window_episodes: 5,
            recovery_target_fraction: 0.9,
            late_phase_from_episode: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateSection {
    pub n_systems: usize,
    pub seed: u64,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        Self {
            n_systems: 100,
            seed: 1,
        }
    }
}

/// Full run configuration; defaults reproduce the stock hyperparameter
/// table (8 envs, 150 episodes, gamma 0.99, Adam 5e-4, clip 1.0, bonus
/// 0.02, buffer 64, top-8 broadcast, rank 16).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub train: TrainSection,
    pub stack: StackSection,
    pub env: EnvSection,
    pub metrics: MetricsSection,
    pub calibrate: CalibrateSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text).context("parsing config")?;
        Ok(cfg)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            episodes: self.train.episodes,
            gamma: self.train.gamma,
            lr: self.train.lr,
            clip: self.train.clip,
            phi_bonus_weight: self.train.phi_bonus_weight,
            seed,
            baseline: self.train.baseline,
            phi_loss_last_layer_only: self.train.phi_loss_last_layer_only,
        }
    }

    pub fn stack_config(&self) -> StackConfig {
        let mut phi = PhiConfig::new(self.stack.rank);
        phi.epsilon = self.stack.epsilon;
        StackConfig {
            n_layers: self.stack.layers,
            in_dim: self.env.grid * self.env.grid + 2,
            h_dim: self.stack.h_dim,
            mu_dim: self.stack.mu_dim,
            buf_len: self.stack.buf_len,
            phi,
            top_k: self.stack.top_k,
            n_actions: 4,
            workspace_include_layer1: self.stack.workspace_include_layer1,
            meta_enabled: self.stack.meta_enabled,
            phi_bonus_enabled: self.stack.phi_bonus_enabled,
        }
    }

    pub fn env_config(&self) -> Result<EnvConfig> {
        let mode = match self.env.damage_mode.as_str() {
            "noop-right" => DamageMode::NoopRight,
            "noop-right-and-move-goal" => DamageMode::NoopRightAndMoveGoal,
            other => anyhow::bail!("unknown damage mode {other:?}"),
        };
        Ok(EnvConfig {
            grid: self.env.grid,
            start: (self.env.start[0], self.env.start[1]),
            goal: (self.env.goal[0], self.env.goal[1]),
            damage_goal: (self.env.damage_goal[0], self.env.damage_goal[1]),
            damage_start: (self.env.damage_start[0], self.env.damage_start[1]),
            damage_step: self.env.damage_step,
            max_len: self.env.max_len,
            damage_mode: mode,
            n_envs: self.env.n_envs,
        })
    }

    /// Serialize the resolved configuration next to the outputs.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = toml::to_string_pretty(self).context("serializing config")?;
        std::fs::write(dir.join("config.toml"), text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.train.lr, 5e-4);
        assert_eq!(back.train.episodes, 150);
        assert_eq!(back.stack.buf_len, 64);
        assert_eq!(back.stack.rank, 16);
        assert_eq!(back.stack.top_k, 8);
        assert_eq!(back.env.damage_step, 50);
        assert_eq!(back.env.n_envs, 8);
        assert_eq!(back.run.seeds, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn unknown_fields_rejected() {
        let res: std::result::Result<RunConfig, _> = toml::from_str("[train]\nnot_a_field = 3\n");
        assert!(res.is_err());
    }

    #[test]
    fn core_configs_derive_correctly() {
        let cfg = RunConfig::default();
        let stack = cfg.stack_config();
        assert_eq!(stack.in_dim, 18);
        assert_eq!(stack.n_layers, 4);
        let env = cfg.env_config().unwrap();
        assert_eq!(env.damage_step, 50);
        let tc = cfg.train_config(7);
        assert_eq!(tc.seed, 7);
        assert_eq!(tc.lr, 5e-4);
    }
}
