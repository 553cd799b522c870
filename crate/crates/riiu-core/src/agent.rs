//! The stacked agent and its training loop.
//!
//! Four units run in a chain: layer 1 consumes the observation, each
//! later layer consumes the previous layer's broadcast, and every
//! layer receives the same global workspace vector. The workspace is
//! the elementwise mean of the layer broadcasts with all but the
//! `top_k` largest-magnitude entries zeroed, fed back on the next
//! step. A linear head over the last broadcast gives action logits.
//!
//! Training is episodic policy-gradient: sample actions from the
//! softmax policy, accumulate discounted returns-to-go, and descend
//! `L = -sum_t log pi(a_t) G_t / n_envs - bonus_weight * mean(phi)`
//! with clipped Adam, one optimizer step per episode. Hidden and meta
//! states and the surrogate windows persist across episodes; the
//! workspace resets to zero. Each episode records on a fresh tape, so
//! carried-over states enter as constants.

use crate::autophi::{self, PhiConfig, SlidingBuffer};
use crate::cell::{norm_guard_factor, riiu_step, CellConfig, RiiuState};
use crate::env::{Action, EnvConfig, VecEnv};
use crate::error::{Error, Result};
use crate::grad::{adam_update, clip_global_norm, AdamState, NodeId, Tape};
use crate::params::{ParamRef, ParamSlot, RiiuParams, StackParams};
use crate::rng::RngStream;
use crate::tensor::{Matrix, Vector};

/// Geometry and switches of the stacked agent.
#[derive(Debug, Clone)]
pub struct StackConfig {
    pub n_layers: usize,
    pub in_dim: usize,
    pub h_dim: usize,
    pub mu_dim: usize,
    pub buf_len: usize,
    pub phi: PhiConfig,
    /// Workspace sparsity: entries kept after the mean.
    pub top_k: usize,
    pub n_actions: usize,
    /// Whether layer 1's broadcast joins the workspace mean.
    pub workspace_include_layer1: bool,
    /// False removes the reflexive net in every layer (the no-meta
    /// ablation).
    pub meta_enabled: bool,
    pub phi_bonus_enabled: bool,
}

impl StackConfig {
    pub fn standard() -> Self {
        Self {
            n_layers: 4,
            in_dim: 18,
            h_dim: 32,
            mu_dim: 16,
            buf_len: 64,
            phi: PhiConfig::new(16),
            top_k: 8,
            n_actions: 4,
            workspace_include_layer1: true,
            meta_enabled: true,
            phi_bonus_enabled: true,
        }
    }

    pub fn layer_cfg(&self, layer: usize) -> CellConfig {
        CellConfig {
            in_dim: if layer == 0 { self.in_dim } else { self.h_dim },
            h_dim: self.h_dim,
            mu_dim: self.mu_dim,
            buf_len: self.buf_len,
            phi: self.phi.clone(),
            meta_enabled: self.meta_enabled,
            phi_bonus_enabled: self.phi_bonus_enabled,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.n_actions == 0 || self.top_k == 0 {
            return Err(Error::InvalidConfig("stack dims must be positive".into()));
        }
        for l in 0..self.n_layers {
            self.layer_cfg(l).validate()?;
        }
        Ok(())
    }

    pub fn init_params(&self, rng: &mut RngStream) -> StackParams {
        let layers = (0..self.n_layers)
            .map(|l| RiiuParams::init(rng, &self.layer_cfg(l)))
            .collect();
        let bound = 1.0 / (self.h_dim as f64).sqrt();
        let policy = Matrix::from_fn(self.n_actions, self.h_dim, |_, _| rng.range(-bound, bound));
        StackParams { layers, policy }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub episodes: usize,
    pub gamma: f64,
    pub lr: f64,
    pub clip: f64,
    pub phi_bonus_weight: f64,
    pub seed: u64,
    /// Subtract a running mean of observed returns-to-go (maintained
    /// across episodes) before weighting log-probs.
    pub baseline: bool,
    /// Use only the last layer's surrogate in the bonus instead of the
    /// mean across layers.
    pub phi_loss_last_layer_only: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 150,
            gamma: 0.99,
            lr: 5e-4,
            clip: 1.0,
            phi_bonus_weight: 0.02,
            seed: 1,
            baseline: true,
            phi_loss_last_layer_only: false,
        }
    }
}

/// Softmax with the usual max-shift; sums to one.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn sample_categorical(probs: &[f64], rng: &mut RngStream) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Mean of the given broadcasts with all but the `top_k`
/// largest-magnitude entries zeroed (ties keep the lower index).
pub fn workspace_update(broadcasts: &[Vector], top_k: usize) -> Vector {
    assert!(!broadcasts.is_empty());
    let d = broadcasts[0].dim();
    let mut mean = Vector::zeros(d);
    for b in broadcasts {
        mean.axpy(1.0, b);
    }
    mean = mean.scale(1.0 / broadcasts.len() as f64);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| {
        mean[j]
            .abs()
            .partial_cmp(&mean[i].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut out = Vector::zeros(d);
    for &i in order.iter().take(top_k) {
        out[i] = mean[i];
    }
    out
}

/// Value-level stack step: advances all per-layer states for one
/// observation and returns the action logits and per-layer surrogate
/// values. The workspace `w` is the previous step's output; computing
/// the next one is the caller's job (see [`workspace_update`]).
pub fn stack_forward(
    params: &StackParams,
    cfg: &StackConfig,
    states: &mut [RiiuState],
    obs: &Vector,
    workspace: &Vector,
) -> Result<(Vector, Vec<f64>)> {
    if states.len() != cfg.n_layers {
        return Err(Error::ShapeMismatch("state count != layer count".into()));
    }
    let mut input = obs.clone();
    let mut phis = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let lcfg = cfg.layer_cfg(l);
        riiu_step(&params.layers[l], &mut states[l], &input, workspace, &lcfg)?;
        phis.push(states[l].phi_hat);
        input = states[l].broadcast.clone();
    }
    let logits = params.policy.matvec(&input)?;
    Ok((logits, phis))
}

/// One recorded step of a vectorized rollout.
#[derive(Debug)]
pub struct TrajStep {
    pub observations: Vec<Vector>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<NodeId>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Marks the env's first episode within the segment (up to and
    /// including its first done); used for return reporting.
    pub active: Vec<bool>,
    /// Step position within each env's current episode (0-based).
    pub episode_pos: Vec<usize>,
    /// Surrogate nodes, env-major then layer.
    pub phi_nodes: Vec<NodeId>,
    /// Mean surrogate value across envs and layers.
    pub phi_mean: f64,
    pub global_step: u64,
    pub damaged: bool,
}

/// Everything one episode's tape knows about the interaction.
#[derive(Debug)]
pub struct Trajectory {
    pub steps: Vec<TrajStep>,
    pub n_envs: usize,
    pub n_layers: usize,
}

impl Trajectory {
    /// Mean over envs of the summed episode rewards (active steps).
    pub fn mean_return(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        for e in 0..self.n_envs {
            for s in &self.steps {
                if s.active[e] {
                    total += s.rewards[e];
                }
            }
        }
        total / self.n_envs as f64
    }

    /// Mean surrogate value over steps, envs, and layers.
    pub fn mean_phi(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.phi_mean).sum::<f64>() / self.steps.len() as f64
    }
}

/// Persistent agent: parameters plus per-env, per-layer carried states
/// and workspaces.
pub struct Agent {
    pub cfg: StackConfig,
    pub params: StackParams,
    h: Vec<Vec<Vector>>,
    mu: Vec<Vec<Vector>>,
    buffers: Vec<Vec<SlidingBuffer>>,
    workspace: Vec<Vector>,
    pub degenerate_events: u64,
}

impl Agent {
    pub fn new(cfg: StackConfig, n_envs: usize, rng: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        let params = cfg.init_params(rng);
        Ok(Self::with_params(cfg, n_envs, params))
    }

    pub fn with_params(cfg: StackConfig, n_envs: usize, params: StackParams) -> Self {
        let state_dim = cfg.h_dim + cfg.mu_dim;
        let h = vec![vec![Vector::zeros(cfg.h_dim); cfg.n_layers]; n_envs];
        let mu = vec![vec![Vector::zeros(cfg.mu_dim); cfg.n_layers]; n_envs];
        let buffers =
            vec![vec![SlidingBuffer::new(cfg.buf_len, state_dim); cfg.n_layers]; n_envs];
        let workspace = vec![Vector::zeros(cfg.h_dim); n_envs];
        Self {
            cfg,
            params,
            h,
            mu,
            buffers,
            workspace,
            degenerate_events: 0,
        }
    }

    pub fn n_envs(&self) -> usize {
        self.workspace.len()
    }

    /// Window contents of one layer's buffer (diagnostics).
    pub fn debug_window(&self, env: usize, layer: usize) -> Vec<Vector> {
        self.buffers[env][layer].window()
    }

    /// Drop all carried state (fresh hidden/meta vectors, empty
    /// windows, zero workspace). Parameters are kept.
    pub fn reset_states(&mut self) {
        let state_dim = self.cfg.h_dim + self.cfg.mu_dim;
        for e in 0..self.n_envs() {
            for l in 0..self.cfg.n_layers {
                self.h[e][l] = Vector::zeros(self.cfg.h_dim);
                self.mu[e][l] = Vector::zeros(self.cfg.mu_dim);
                self.buffers[e][l] = SlidingBuffer::new(self.cfg.buf_len, state_dim);
            }
            self.workspace[e] = Vector::zeros(self.cfg.h_dim);
        }
    }

    /// One episode on a fresh tape. Carried states enter as constants;
    /// the workspace starts at zero. With `greedy` the argmax action is
    /// taken instead of sampling.
    pub fn rollout(
        &mut self,
        env: &mut VecEnv,
        rng: &mut RngStream,
        tape: &mut Tape,
        greedy: bool,
    ) -> Result<Trajectory> {
        let n_envs = env.n_envs();
        if n_envs != self.n_envs() {
            return Err(Error::ShapeMismatch("agent/env count mismatch".into()));
        }
        let cfg = self.cfg.clone();
        let nl = cfg.n_layers;
        let params = &self.params;
        let buffers = &mut self.buffers;
        let mut degenerate_events = 0u64;

        let mut obs = env.reset();
        for w in self.workspace.iter_mut() {
            *w = Vector::zeros(cfg.h_dim);
        }

        let mut h_nodes: Vec<Vec<NodeId>> = (0..n_envs)
            .map(|e| (0..nl).map(|l| tape.input_vector(&self.h[e][l])).collect())
            .collect();
        let mut mu_nodes: Vec<Vec<NodeId>> = (0..n_envs)
            .map(|e| (0..nl).map(|l| tape.input_vector(&self.mu[e][l])).collect())
            .collect();
        let mut w_nodes: Vec<NodeId> = (0..n_envs)
            .map(|e| tape.input_vector(&self.workspace[e]))
            .collect();

        let mut done_once = vec![false; n_envs];
        let mut episode_pos = vec![0usize; n_envs];
        let mut steps: Vec<TrajStep> = Vec::with_capacity(env.cfg.max_len);

        // Fixed-length segment: grids that finish reset in place and
        // keep playing, so the window keeps seeing fresh states; the
        // workspace and recurrent context carry across those resets.
        for _t in 0..env.cfg.max_len {
            let mut actions = Vec::with_capacity(n_envs);
            let mut log_probs = Vec::with_capacity(n_envs);
            let mut phi_nodes = Vec::with_capacity(n_envs * nl);
            let mut phi_sum = 0.0;

            for e in 0..n_envs {
                let mut input_node = tape.input_vector(&obs[e]);
                let mut bcast_nodes: Vec<NodeId> = Vec::with_capacity(nl);
                for l in 0..nl {
                    // integrate
                    let ax = tape.matvec(params, ParamRef::Layer(l, ParamSlot::Wx), input_node)?;
                    let ah = tape.matvec(params, ParamRef::Layer(l, ParamSlot::Wh), h_nodes[e][l])?;
                    let aw = tape.matvec(params, ParamRef::Layer(l, ParamSlot::Wb), w_nodes[e])?;
                    let s1 = tape.add(ax, ah)?;
                    let s2 = tape.add(s1, aw)?;
                    let mut h_new = tape.gelu(s2);
                    let guard = norm_guard_factor(&Vector::from_slice(tape.value(h_new)));
                    if guard < 1.0 {
                        h_new = tape.scale_const(h_new, guard);
                    }

                    // reflect
                    let mu_new = if cfg.meta_enabled {
                        let z_pre = Vector::concat(&[
                            &Vector::from_slice(tape.value(h_new)),
                            &Vector::from_slice(tape.value(mu_nodes[e][l])),
                        ]);
                        let probe = buffers[e][l].window_after_push(&z_pre);
                        let eval = autophi::eval_phi_at(&probe, probe.len() - 1, &cfg.phi);
                        if eval.degenerate {
                            degenerate_events += 1;
                        }
                        let grad_node = tape.input(eval.grad.as_slice()[..cfg.h_dim].to_vec());
                        let g_in = tape.concat(&[h_new, mu_nodes[e][l], grad_node]);
                        let a1 = tape.matvec(params, ParamRef::Layer(l, ParamSlot::Gw1), g_in)?;
                        let a1b = tape.add_bias(params, ParamRef::Layer(l, ParamSlot::Gb1), a1)?;
                        let a1g = tape.gelu(a1b);
                        let m2 = tape.matvec(params, ParamRef::Layer(l, ParamSlot::Gw2), a1g)?;
                        let mut mu_out =
                            tape.add_bias(params, ParamRef::Layer(l, ParamSlot::Gb2), m2)?;
                        let guard = norm_guard_factor(&Vector::from_slice(tape.value(mu_out)));
                        if guard < 1.0 {
                            mu_out = tape.scale_const(mu_out, guard);
                        }
                        mu_out
                    } else {
                        mu_nodes[e][l]
                    };

                    // measure
                    let z_node = tape.concat(&[h_new, mu_new]);
                    let z_value = Vector::from_slice(tape.value(z_node));
                    let post = buffers[e][l].window_after_push(&z_value);
                    let eval = autophi::eval_phi_at(&post, post.len() - 1, &cfg.phi);
                    if eval.degenerate {
                        degenerate_events += 1;
                    }
                    buffers[e][l].push(z_value)?;
                    let phi_node =
                        tape.linearized_scalar(z_node, eval.value, eval.grad.into_vec())?;

                    h_nodes[e][l] = h_new;
                    mu_nodes[e][l] = mu_new;
                    phi_nodes.push(phi_node);
                    phi_sum += tape.scalar(phi_node);

                    // broadcast
                    let cat = tape.concat(&[h_new, mu_new, phi_node]);
                    let b_new = tape.matvec(params, ParamRef::Layer(l, ParamSlot::Wo), cat)?;
                    bcast_nodes.push(b_new);
                    input_node = b_new;
                }
                let logits = tape.matvec(params, ParamRef::Policy, input_node)?;
                let probs = softmax(tape.value(logits));
                let action = if greedy {
                    argmax(&probs)
                } else {
                    sample_categorical(&probs, rng)
                };
                actions.push(action);
                log_probs.push(tape.log_softmax_pick(logits, action));

                let ws_parts: Vec<NodeId> = if cfg.workspace_include_layer1 {
                    bcast_nodes.clone()
                } else {
                    bcast_nodes[1..].to_vec()
                };
                let mean = tape.mean(&ws_parts)?;
                w_nodes[e] = tape.top_k_mask(mean, cfg.top_k);
            }

            let act_enum: Vec<Action> = actions.iter().map(|&a| Action::from_index(a)).collect();
            let res = env.step(&act_enum)?;
            let active: Vec<bool> = done_once.iter().map(|d| !d).collect();
            for (d, now) in done_once.iter_mut().zip(res.dones.iter()) {
                *d |= now;
            }
            let pos_now = episode_pos.clone();
            for (p, done) in episode_pos.iter_mut().zip(res.dones.iter()) {
                *p = if *done { 0 } else { *p + 1 };
            }
            steps.push(TrajStep {
                observations: std::mem::take(&mut obs),
                actions,
                log_probs,
                rewards: res.rewards.clone(),
                dones: res.dones.clone(),
                active,
                episode_pos: pos_now,
                phi_nodes,
                phi_mean: phi_sum / (n_envs * nl) as f64,
                global_step: env.global_step(),
                damaged: env.damaged(),
            });
            obs = res.observations;
        }

        // detach carried state for the next episode
        for e in 0..n_envs {
            for l in 0..nl {
                self.h[e][l] = Vector::from_slice(tape.value(h_nodes[e][l]));
                self.mu[e][l] = Vector::from_slice(tape.value(mu_nodes[e][l]));
            }
            self.workspace[e] = Vector::from_slice(tape.value(w_nodes[e]));
        }
        self.degenerate_events += degenerate_events;

        Ok(Trajectory {
            steps,
            n_envs,
            n_layers: nl,
        })
    }
}

/// Discounted return-to-go per env and step. Episode boundaries inside
/// the segment (auto-resets) cut the recursion: a done step does not
/// inherit value from the following episode.
pub fn returns_to_go(traj: &Trajectory, gamma: f64) -> Vec<Vec<f64>> {
    let mut all_g: Vec<Vec<f64>> = Vec::with_capacity(traj.n_envs);
    for e in 0..traj.n_envs {
        let mut g = vec![0.0; traj.steps.len()];
        let mut acc = 0.0;
        for (i, s) in traj.steps.iter().enumerate().rev() {
            if s.dones[e] {
                acc = 0.0;
            }
            acc = s.rewards[e] + gamma * acc;
            g[i] = acc;
        }
        all_g.push(g);
    }
    all_g
}

/// Assemble the episodic loss on the tape:
/// `-(1/n_envs) sum_e sum_t log pi(a) (G_t - b_t) - w_phi * mean(phi)`,
/// where `b_t` is the baseline for within-episode step position `t`
/// (empty slice when disabled). Indexing the baseline by episode
/// position matters: a single scalar sits above the discounted
/// early-step returns forever and slowly erodes a converged policy.
pub fn reinforce_loss(
    tape: &mut Tape,
    traj: &Trajectory,
    cfg: &TrainConfig,
    stack: &StackConfig,
    baseline: &[f64],
) -> Result<NodeId> {
    if traj.steps.is_empty() {
        return Err(Error::InvalidConfig("empty trajectory".into()));
    }
    let mut terms: Vec<(f64, NodeId)> = Vec::new();

    let all_g = returns_to_go(traj, cfg.gamma);
    let env_weight = 1.0 / traj.n_envs as f64;
    for e in 0..traj.n_envs {
        for (i, s) in traj.steps.iter().enumerate() {
            let b = baseline.get(s.episode_pos[e]).copied().unwrap_or(0.0);
            let g = all_g[e][i] - b;
            if g != 0.0 {
                terms.push((-env_weight * g, s.log_probs[e]));
            }
        }
    }

    // surrogate bonus
    if stack.phi_bonus_enabled && cfg.phi_bonus_weight != 0.0 {
        let mut phi_terms: Vec<NodeId> = Vec::new();
        for s in &traj.steps {
            for (i, &p) in s.phi_nodes.iter().enumerate() {
                let layer = i % traj.n_layers;
                if cfg.phi_loss_last_layer_only && layer + 1 != traj.n_layers {
                    continue;
                }
                phi_terms.push(p);
            }
        }
        if !phi_terms.is_empty() {
            let w = -cfg.phi_bonus_weight / phi_terms.len() as f64;
            for p in phi_terms {
                terms.push((w, p));
            }
        }
    }

    if terms.is_empty() {
        // all returns zero and no bonus: the loss is the zero constant
        let zero = tape.input(vec![0.0]);
        return tape.affine_sum(&[(1.0, zero)]);
    }
    tape.affine_sum(&terms)
}

/// Per-episode log row.
#[derive(Debug, Clone)]
pub struct EpisodeRow {
    pub episode: usize,
    pub mean_return: f64,
    pub phi_rel_percent: f64,
    pub global_step_start: u64,
    pub global_step_end: u64,
    pub damaged: bool,
}

/// Per-environment-step log row.
#[derive(Debug, Clone)]
pub struct StepRow {
    pub global_step: u64,
    pub mean_reward: f64,
    pub phi_rel_percent: f64,
    pub damaged: bool,
}

/// Output of one training run.
pub struct TrainOutput {
    pub episodes: Vec<EpisodeRow>,
    pub steps: Vec<StepRow>,
    pub params: StackParams,
    pub degenerate_events: u64,
}

/// Train a stacked agent for `cfg.episodes` episodes.
pub fn train(
    cfg: &TrainConfig,
    stack_cfg: &StackConfig,
    env_cfg: &EnvConfig,
) -> Result<TrainOutput> {
    stack_cfg.validate()?;
    env_cfg.validate()?;
    let mut master = RngStream::new(cfg.seed);
    let mut init_rng = master.split();
    let env_rng = master.split();
    let mut action_rng = master.split();

    let mut env = VecEnv::new(env_cfg.clone(), env_rng)?;
    let mut agent = Agent::new(stack_cfg.clone(), env_cfg.n_envs, &mut init_rng)?;
    let mut adam = AdamState::new(&agent.params);

    let mut episodes = Vec::with_capacity(cfg.episodes);
    let mut steps: Vec<StepRow> = Vec::new();
    // Running mean of returns-to-go per within-episode step position
    // (exponential moving average across episodes); the baseline when
    // enabled. Indexing by position lets advantages go to zero at a
    // converged policy instead of leaving a permanent discount-shaped
    // residual, and the fast-tracking average follows a collapse down
    // so recovery is not stalled by stale expectations.
    let mut g_base: Vec<f64> = vec![0.0; env_cfg.max_len];
    let mut g_warm: Vec<bool> = vec![false; env_cfg.max_len];

    for episode in 0..cfg.episodes {
        let start_step = env.global_step();
        let mut tape = Tape::new();
        let traj = agent.rollout(&mut env, &mut action_rng, &mut tape, false)?;
        let baseline: Vec<f64> = if cfg.baseline { g_base.clone() } else { Vec::new() };
        let loss = reinforce_loss(&mut tape, &traj, cfg, stack_cfg, &baseline)?;
        let gs = returns_to_go(&traj, cfg.gamma);
        for e in 0..traj.n_envs {
            for (i, s) in traj.steps.iter().enumerate() {
                let pos = s.episode_pos[e];
                if g_warm[pos] {
                    g_base[pos] = 0.9 * g_base[pos] + 0.1 * gs[e][i];
                } else {
                    g_base[pos] = gs[e][i];
                    g_warm[pos] = true;
                }
            }
        }
        let loss_value = tape.scalar(loss);
        if !loss_value.is_finite() {
            return Err(Error::Diverged(format!(
                "loss {loss_value} at episode {episode}"
            )));
        }
        let mut grads = tape.backward(&agent.params, loss)?;
        clip_global_norm(&mut grads, cfg.clip);
        adam_update(&mut agent.params, &grads, &mut adam, cfg.lr)?;
        if !agent.params.is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite parameters after episode {episode}"
            )));
        }

        for s in &traj.steps {
            steps.push(StepRow {
                global_step: s.global_step,
                mean_reward: s.rewards.iter().sum::<f64>() / s.rewards.len() as f64,
                phi_rel_percent: 100.0 * s.phi_mean,
                damaged: s.damaged,
            });
        }
        episodes.push(EpisodeRow {
            episode: episode + 1,
            mean_return: traj.mean_return(),
            phi_rel_percent: 100.0 * traj.mean_phi(),
            global_step_start: start_step,
            global_step_end: env.global_step(),
            damaged: env.damaged(),
        });
    }

    Ok(TrainOutput {
        episodes,
        steps,
        params: agent.params,
        degenerate_events: agent.degenerate_events,
    })
}

/// Mean greedy (argmax) return over one segment, no learning.
///
/// A converged policy here is typically a calibrated mixture rather
/// than a near-deterministic one, so forcing the argmax can behave
/// much worse than the policy itself; prefer [`eval_return`] for
/// checkpoint smoke tests.
pub fn greedy_return(agent: &mut Agent, env: &mut VecEnv) -> Result<f64> {
    let mut tape = Tape::new();
    let mut rng = RngStream::new(0);
    let traj = agent.rollout(env, &mut rng, &mut tape, true)?;
    Ok(traj.mean_return())
}

/// Mean return of one evaluation segment: actions sampled from the
/// policy, nothing learned.
pub fn eval_return(agent: &mut Agent, env: &mut VecEnv, rng: &mut RngStream) -> Result<f64> {
    let mut tape = Tape::new();
    let traj = agent.rollout(env, rng, &mut tape, false)?;
    Ok(traj.mean_return())
}

/// Steps after the actuator fault until the mean episode return
/// sustains a target level.
///
/// The target is an absolute return (callers normalize against the
/// optimal achievable return, which this environment keeps equal
/// before and after damage); `window` consecutive episodes must all
/// average at or above it. Returns the step distance from `damage_step`
/// to the start of the qualifying window, zero when the agent never
/// dropped below target, and the censored post-damage span when it
/// never recovers.
pub fn recovery_latency_vs_target(
    episodes: &[EpisodeRow],
    damage_step: u64,
    target: f64,
    window: usize,
) -> Result<u64> {
    let first_damaged = episodes
        .iter()
        .position(|e| e.damaged)
        .ok_or_else(|| Error::NotApplicable("no damage in log".into()))?;
    let w = window.max(1);
    for e in first_damaged..episodes.len() {
        if e + w > episodes.len() {
            break;
        }
        let ok = episodes[e..e + w].iter().all(|row| row.mean_return >= target);
        if ok {
            return Ok(episodes[e].global_step_start.saturating_sub(damage_step));
        }
    }
    Ok(episodes
        .last()
        .map(|e| e.global_step_end.saturating_sub(damage_step))
        .unwrap_or(0))
}

/// Steps needed after the actuator fault until the smoothed per-step
/// reward regains 90% of its pre-damage level.
///
/// The pre-damage level is the mean reward over the last `pre_window`
/// steps before damage (the level the agent actually held going in,
/// not its lifetime average over warm-up). `window` is the trailing
/// smoothing width applied to the post-damage series. When the log
/// never recovers, the censored count of post-damage steps is
/// returned.
pub fn repair_latency(steps: &[StepRow], window: usize, pre_window: usize) -> Result<usize> {
    let damage_idx = steps
        .iter()
        .position(|s| s.damaged)
        .ok_or_else(|| Error::NotApplicable("no damage in log".into()))?;
    if damage_idx == 0 {
        return Err(Error::NotApplicable("no pre-damage baseline".into()));
    }
    let lo = damage_idx.saturating_sub(pre_window.max(1));
    let pre: f64 = steps[lo..damage_idx]
        .iter()
        .map(|s| s.mean_reward)
        .sum::<f64>()
        / (damage_idx - lo) as f64;
    let threshold = 0.9 * pre;
    let w = window.max(1);
    // Recovery onset: the first post-damage step from which the next
    // `w` steps average at or above the threshold. A forward window
    // avoids both masking the crash with pre-damage rewards and
    // declaring recovery off a single lucky step.
    let post = &steps[damage_idx..];
    if post.len() >= w {
        for k in 0..=(post.len() - w) {
            let smoothed: f64 =
                post[k..k + w].iter().map(|s| s.mean_reward).sum::<f64>() / w as f64;
            if smoothed >= threshold {
                return Ok(k);
            }
        }
    }
    Ok(post.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::DamageMode;

    fn tiny_stack() -> StackConfig {
        let mut cfg = StackConfig::standard();
        cfg.n_layers = 2;
        cfg.h_dim = 10;
        cfg.mu_dim = 5;
        cfg.buf_len = 10;
        cfg.phi = PhiConfig::new(4);
        cfg.top_k = 3;
        cfg
    }

    fn small_env() -> EnvConfig {
        EnvConfig {
            n_envs: 3,
            ..EnvConfig::default()
        }
    }

    #[test]
    fn workspace_update_zeroes_and_passthrough() {
        let zeros = vec![Vector::zeros(6); 4];
        let out = workspace_update(&zeros, 3);
        assert!(out.as_slice().iter().all(|&v| v == 0.0));

        // exactly k nonzero mean entries pass through
        let a = Vector::from_slice(&[1.0, 0.0, 0.0, 2.0, 0.0, -3.0]);
        let out = workspace_update(&[a.clone()], 3);
        assert_eq!(out.as_slice(), a.as_slice());
    }

    #[test]
    fn workspace_update_matches_sort_oracle() {
        let mut rng = RngStream::new(80);
        for _ in 0..20 {
            let parts: Vec<Vector> = (0..4)
                .map(|_| Vector::from_vec((0..12).map(|_| rng.normal()).collect()))
                .collect();
            let k = 5;
            let out = workspace_update(&parts, k);
            let mut mean = Vector::zeros(12);
            for p in &parts {
                mean.axpy(0.25, p);
            }
            let mut mags: Vec<(f64, usize)> =
                (0..12).map(|i| (mean[i].abs(), i)).collect();
            mags.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let keep: std::collections::HashSet<usize> =
                mags.iter().take(k).map(|&(_, i)| i).collect();
            let nonzero = out.as_slice().iter().filter(|&&v| v != 0.0).count();
            assert!(nonzero <= k);
            for i in 0..12 {
                if keep.contains(&i) {
                    assert_eq!(out[i], mean[i]);
                } else {
                    assert_eq!(out[i], 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_policy_gives_uniform_actions() {
        let cfg = tiny_stack();
        let mut rng = RngStream::new(81);
        let mut params = cfg.init_params(&mut rng);
        params.policy = Matrix::zeros(cfg.n_actions, cfg.h_dim);
        let mut states: Vec<RiiuState> =
            (0..cfg.n_layers).map(|l| RiiuState::zeros(&cfg.layer_cfg(l))).collect();
        let obs = Vector::from_vec((0..cfg.in_dim).map(|_| rng.normal()).collect());
        let (logits, phis) =
            stack_forward(&params, &cfg, &mut states, &obs, &Vector::zeros(cfg.h_dim)).unwrap();
        let probs = softmax(logits.as_slice());
        for p in &probs {
            assert!((p - 0.25).abs() < 1e-12);
        }
        for phi in phis {
            assert!((0.0..=1.0).contains(&phi));
        }
    }

    #[test]
    fn zero_workspace_matrix_ignores_workspace() {
        let cfg = tiny_stack();
        let mut rng = RngStream::new(82);
        let mut params = cfg.init_params(&mut rng);
        for l in 0..cfg.n_layers {
            params.layers[l].w_b = Matrix::zeros(cfg.h_dim, cfg.h_dim);
        }
        let obs = Vector::from_vec((0..cfg.in_dim).map(|_| rng.normal()).collect());
        let w = Vector::from_vec((0..cfg.h_dim).map(|_| rng.normal()).collect());

        let mut s1: Vec<RiiuState> =
            (0..cfg.n_layers).map(|l| RiiuState::zeros(&cfg.layer_cfg(l))).collect();
        let mut s2 = s1.clone();
        let (a, _) = stack_forward(&params, &cfg, &mut s1, &obs, &Vector::zeros(cfg.h_dim)).unwrap();
        let (b, _) = stack_forward(&params, &cfg, &mut s2, &obs, &w).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn rollout_respects_max_len_and_softmax_normalizes() {
        let cfg = tiny_stack();
        let env_cfg = small_env();
        let mut rng = RngStream::new(83);
        let mut agent = Agent::new(cfg, env_cfg.n_envs, &mut rng).unwrap();
        let mut env = VecEnv::new(env_cfg.clone(), RngStream::new(1)).unwrap();
        let mut tape = Tape::new();
        let traj = agent.rollout(&mut env, &mut rng, &mut tape, false).unwrap();
        assert!(traj.steps.len() <= env_cfg.max_len);
        for s in &traj.steps {
            for e in 0..traj.n_envs {
                // log pi must match the log softmax identity
                let lp = tape.scalar(s.log_probs[e]);
                assert!(lp <= 0.0 && lp.is_finite());
            }
        }
    }

    #[test]
    fn tape_rollout_matches_value_level_stack_greedy() {
        // Drive the value-level stack with the same greedy choices and
        // workspace rule; trajectories must agree to fp tolerance.
        let cfg = tiny_stack();
        let env_cfg = small_env();
        let mut rng = RngStream::new(84);
        let mut agent = Agent::new(cfg.clone(), env_cfg.n_envs, &mut rng).unwrap();
        let params = agent.params.clone();

        let mut env = VecEnv::new(env_cfg.clone(), RngStream::new(2)).unwrap();
        let mut tape = Tape::new();
        let mut rng2 = RngStream::new(0);
        let traj = agent.rollout(&mut env, &mut rng2, &mut tape, true).unwrap();

        // independent value-level replay
        let mut env2 = VecEnv::new(env_cfg.clone(), RngStream::new(2)).unwrap();
        let mut obs = env2.reset();
        let mut states: Vec<Vec<RiiuState>> = (0..env_cfg.n_envs)
            .map(|_| {
                (0..cfg.n_layers)
                    .map(|l| RiiuState::zeros(&cfg.layer_cfg(l)))
                    .collect()
            })
            .collect();
        let mut ws = vec![Vector::zeros(cfg.h_dim); env_cfg.n_envs];
        for s in &traj.steps {
            let mut actions = Vec::new();
            for e in 0..env_cfg.n_envs {
                let (logits, _phis) =
                    stack_forward(&params, &cfg, &mut states[e], &obs[e], &ws[e]).unwrap();
                let probs = softmax(logits.as_slice());
                let action = argmax(&probs);
                assert_eq!(action, s.actions[e], "greedy actions agree");
                actions.push(Action::from_index(action));
                let parts: Vec<Vector> = if cfg.workspace_include_layer1 {
                    states[e].iter().map(|st| st.broadcast.clone()).collect()
                } else {
                    states[e][1..].iter().map(|st| st.broadcast.clone()).collect()
                };
                ws[e] = workspace_update(&parts, cfg.top_k);
            }
            let res = env2.step(&actions).unwrap();
            assert_eq!(res.rewards, s.rewards);
            obs = res.observations;
        }
    }

    #[test]
    fn loss_zero_when_no_reward_and_no_bonus() {
        let mut cfg = tiny_stack();
        cfg.phi_bonus_enabled = false;
        let mut env_cfg = small_env();
        env_cfg.goal = (3, 3);
        env_cfg.max_len = 3; // too short to reach the goal
        let mut rng = RngStream::new(85);
        let mut agent = Agent::new(cfg.clone(), env_cfg.n_envs, &mut rng).unwrap();
        let mut env = VecEnv::new(env_cfg, RngStream::new(3)).unwrap();
        let mut tape = Tape::new();
        let traj = agent.rollout(&mut env, &mut rng, &mut tape, false).unwrap();
        assert!(traj.steps.iter().all(|s| s.rewards.iter().all(|&r| r == 0.0)));
        let tc = TrainConfig {
            phi_bonus_weight: 0.0,
            ..TrainConfig::default()
        };
        let loss = reinforce_loss(&mut tape, &traj, &tc, &cfg, &[]).unwrap();
        assert_eq!(tape.scalar(loss), 0.0);
    }

    #[test]
    fn bonus_gradient_scales_linearly_with_weight() {
        let cfg = tiny_stack();
        let env_cfg = small_env();
        let grads_for = |w: f64| -> StackParams {
            let mut rng = RngStream::new(86);
            let mut agent = Agent::new(cfg.clone(), env_cfg.n_envs, &mut rng).unwrap();
            let mut env = VecEnv::new(env_cfg.clone(), RngStream::new(4)).unwrap();
            let mut tape = Tape::new();
            let mut rng2 = RngStream::new(99);
            let traj = agent.rollout(&mut env, &mut rng2, &mut tape, false).unwrap();
            let tc = TrainConfig {
                phi_bonus_weight: w,
                ..TrainConfig::default()
            };
            let loss = reinforce_loss(&mut tape, &traj, &tc, &cfg, &[]).unwrap();
            tape.backward(&agent.params, loss).unwrap()
        };
        let g0 = grads_for(0.0);
        let g1 = grads_for(0.02);
        let g2 = grads_for(0.04);
        // g2 - g0 == 2 (g1 - g0) elementwise
        for r in g0.refs() {
            let a = g0.tensor(r).as_slice();
            let b = g1.tensor(r).as_slice();
            let c = g2.tensor(r).as_slice();
            for i in 0..a.len() {
                let lhs = c[i] - a[i];
                let rhs = 2.0 * (b[i] - a[i]);
                assert!(
                    (lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs().max(rhs.abs())),
                    "{lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn short_training_runs_are_deterministic() {
        let cfg = tiny_stack();
        let env_cfg = small_env();
        let tc = TrainConfig {
            episodes: 4,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train(&tc, &cfg, &env_cfg).unwrap();
        let b = train(&tc, &cfg, &env_cfg).unwrap();
        assert_eq!(a.episodes.len(), 4);
        for (x, y) in a.episodes.iter().zip(b.episodes.iter()) {
            assert_eq!(x.mean_return, y.mean_return);
            assert_eq!(x.phi_rel_percent, y.phi_rel_percent);
        }
        assert_eq!(a.params, b.params);
        for (x, y) in a.steps.iter().zip(b.steps.iter()) {
            assert_eq!(x.mean_reward, y.mean_reward);
            assert_eq!(x.phi_rel_percent, y.phi_rel_percent);
        }
    }

    #[test]
    fn no_meta_variant_trains_without_error() {
        let mut cfg = tiny_stack();
        cfg.meta_enabled = false;
        let env_cfg = small_env();
        let tc = TrainConfig {
            episodes: 3,
            seed: 12,
            ..TrainConfig::default()
        };
        let out = train(&tc, &cfg, &env_cfg).unwrap();
        assert_eq!(out.episodes.len(), 3);
        for row in &out.episodes {
            assert!(row.phi_rel_percent >= 0.0);
        }
    }

    #[test]
    fn empty_trajectory_rejected_by_loss() {
        let cfg = tiny_stack();
        let traj = Trajectory {
            steps: Vec::new(),
            n_envs: 3,
            n_layers: cfg.n_layers,
        };
        let mut tape = Tape::new();
        let tc = TrainConfig::default();
        assert!(matches!(
            reinforce_loss(&mut tape, &traj, &tc, &cfg, &[]),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn repair_latency_fixtures() {
        let mk = |rewards: Vec<f64>, damage_at: usize| -> Vec<StepRow> {
            rewards
                .into_iter()
                .enumerate()
                .map(|(i, r)| StepRow {
                    global_step: i as u64,
                    mean_reward: r,
                    phi_rel_percent: 0.0,
                    damaged: i >= damage_at,
                })
                .collect()
        };
        // never drops: latency 0
        let rows = mk(vec![1.0; 30], 10);
        assert_eq!(repair_latency(&rows, 5, 200).unwrap(), 0);

        // drops to zero, recovers at +13 (window 1)
        let mut r = vec![1.0; 10];
        r.extend(vec![0.0; 13]);
        r.extend(vec![1.0; 10]);
        let rows = mk(r, 10);
        assert_eq!(repair_latency(&rows, 1, 200).unwrap(), 13);

        // no damage in log
        let rows = mk(vec![1.0; 5], 100);
        assert!(matches!(
            repair_latency(&rows, 5, 200),
            Err(Error::NotApplicable(_))
        ));

        // never recovers: censored at log end
        let mut r = vec![1.0; 10];
        r.extend(vec![0.0; 20]);
        let rows = mk(r, 10);
        assert_eq!(repair_latency(&rows, 1, 200).unwrap(), 20);

        // the baseline reflects the recent level, not the warm-up mean
        let mut r = vec![0.0; 50]; // long untrained phase
        r.extend(vec![1.0; 50]); // converged
        r.extend(vec![0.0; 30]); // damage crash
        r.extend(vec![1.0; 10]); // recovery
        let rows = mk(r, 100);
        assert_eq!(repair_latency(&rows, 1, 20).unwrap(), 30);
    }

    #[test]
    fn damage_modes_affect_training_env() {
        let mut env_cfg = small_env();
        env_cfg.damage_mode = DamageMode::NoopRight;
        env_cfg.damage_step = 5;
        let cfg = tiny_stack();
        let tc = TrainConfig {
            episodes: 2,
            seed: 13,
            ..TrainConfig::default()
        };
        // must still run (the task just becomes unsolvable post-damage)
        let out = train(&tc, &cfg, &env_cfg).unwrap();
        assert!(out.steps.iter().any(|s| s.damaged));
    }
}

#[cfg(test)]
mod recovery_tests {
    use super::*;

    fn row(episode: usize, ret: f64, start: u64, damaged: bool) -> EpisodeRow {
        EpisodeRow {
            episode,
            mean_return: ret,
            phi_rel_percent: 0.0,
            global_step_start: start,
            global_step_end: start + 16,
            damaged,
        }
    }

    #[test]
    fn recovery_latency_cases() {
        // never drops below target: latency 0
        let rows: Vec<EpisodeRow> = (0..20)
            .map(|i| row(i + 1, 1.0, i as u64 * 16, i >= 3))
            .collect();
        assert_eq!(
            recovery_latency_vs_target(&rows, 48, 0.9, 3).unwrap(),
            0
        );

        // crashes for 5 episodes then recovers
        let mut rows: Vec<EpisodeRow> = Vec::new();
        for i in 0..20 {
            let ret = if (3..8).contains(&i) { 0.0 } else { 1.0 };
            rows.push(row(i + 1, ret, i as u64 * 16, i >= 3));
        }
        let lat = recovery_latency_vs_target(&rows, 48, 0.9, 3).unwrap();
        assert_eq!(lat, 8 * 16 - 48);

        // never recovers: censored at log end
        let rows: Vec<EpisodeRow> = (0..10)
            .map(|i| row(i + 1, if i >= 3 { 0.0 } else { 1.0 }, i as u64 * 16, i >= 3))
            .collect();
        let lat = recovery_latency_vs_target(&rows, 48, 0.9, 3).unwrap();
        assert_eq!(lat, 10 * 16 - 48);

        // no damage
        let rows: Vec<EpisodeRow> = (0..5).map(|i| row(i + 1, 1.0, i as u64 * 16, false)).collect();
        assert!(recovery_latency_vs_target(&rows, 48, 0.9, 3).is_err());
    }
}
