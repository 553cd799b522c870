//! The RIIU forward step and baseline recurrent cells.
//!
//! One step runs four stages on a unit's state tuple
//! `(h, mu, phi_hat, broadcast)`:
//!
//! 1. integrate: `h' = gelu(W_x x + W_h h + W_b w)`
//! 2. reflect:   `mu' = g([h'; mu; grad_phi])`, a two-layer GELU net,
//!    where `grad_phi` is the integration surrogate's gradient in
//!    hidden space, evaluated on the window as it would look with
//!    `[h'; mu]` pushed (the actual push happens after `mu'` exists)
//! 3. measure:   push `[h'; mu']`, recompute the surrogate on the
//!    updated window
//! 4. broadcast: `B' = W_o [h'; mu'; phi']`
//!
//! The no-meta ablation freezes `mu` and skips stage 2 entirely.

use crate::autophi::{auto_phi_rel, eval_phi_at, PhiConfig, SlidingBuffer};
use crate::error::{Error, Result};
use crate::gelu::gelu;
use crate::params::RiiuParams;
use crate::rng::RngStream;
use crate::tensor::{Matrix, Vector};

/// Norm ceiling for the hidden and meta states. The GELU recurrence is
/// unbounded, and a policy-gradient push can tip the closed loop past
/// spectral radius one; trajectories then grow without bound and
/// overflow the covariance. States far outside the operating range
/// (healthy norms are single digits) are rescaled onto this ball.
pub const STATE_NORM_LIMIT: f64 = 1e3;

/// Rescale factor putting `v` inside the norm ball, 1.0 if already in.
pub fn norm_guard_factor(v: &Vector) -> f64 {
    let n = v.norm();
    if n > STATE_NORM_LIMIT {
        STATE_NORM_LIMIT / n
    } else {
        1.0
    }
}

/// Static shape and feature switches of one unit.
#[derive(Debug, Clone)]
pub struct CellConfig {
    pub in_dim: usize,
    pub h_dim: usize,
    pub mu_dim: usize,
    pub buf_len: usize,
    pub phi: PhiConfig,
    /// When false the reflexive net is removed and `mu` stays frozen.
    pub meta_enabled: bool,
    /// When false this unit's surrogate values are excluded from the
    /// training bonus (they are still measured and logged).
    pub phi_bonus_enabled: bool,
}

impl CellConfig {
    /// The stock geometry: hidden 32, meta 16, window 64, rank 16.
    pub fn standard(in_dim: usize) -> Self {
        Self {
            in_dim,
            h_dim: 32,
            mu_dim: 16,
            buf_len: 64,
            phi: PhiConfig::new(16),
            meta_enabled: true,
            phi_bonus_enabled: true,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.h_dim + self.mu_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.h_dim == 0 || self.mu_dim == 0 {
            return Err(Error::InvalidConfig("cell dims must be positive".into()));
        }
        if self.buf_len < 2 {
            return Err(Error::InvalidConfig("buffer length must be at least 2".into()));
        }
        self.phi.validate(self.state_dim())
    }
}

/// Mutable per-unit state carried across steps.
#[derive(Debug, Clone)]
pub struct RiiuState {
    pub h: Vector,
    pub mu: Vector,
    pub phi_hat: f64,
    pub broadcast: Vector,
    pub buffer: SlidingBuffer,
}

impl RiiuState {
    pub fn zeros(cfg: &CellConfig) -> Self {
        Self {
            h: Vector::zeros(cfg.h_dim),
            mu: Vector::zeros(cfg.mu_dim),
            phi_hat: 0.0,
            broadcast: Vector::zeros(cfg.h_dim),
            buffer: SlidingBuffer::new(cfg.buf_len, cfg.state_dim()),
        }
    }
}

/// Diagnostics from one step.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepDiag {
    /// The surrogate hit a numerically tied eigenvalue at the rank cut.
    pub degenerate_spectrum: bool,
}

fn check_step_shapes(
    params: &RiiuParams,
    state: &RiiuState,
    x: &Vector,
    w: &Vector,
    cfg: &CellConfig,
) -> Result<()> {
    if x.dim() != cfg.in_dim {
        return Err(Error::ShapeMismatch(format!(
            "input dim {} != {}",
            x.dim(),
            cfg.in_dim
        )));
    }
    if w.dim() != cfg.h_dim {
        return Err(Error::ShapeMismatch(format!(
            "workspace dim {} != {}",
            w.dim(),
            cfg.h_dim
        )));
    }
    if state.h.dim() != cfg.h_dim || state.mu.dim() != cfg.mu_dim {
        return Err(Error::ShapeMismatch("state dims inconsistent with config".into()));
    }
    if params.w_x.rows() != cfg.h_dim || params.w_x.cols() != cfg.in_dim {
        return Err(Error::ShapeMismatch("w_x shape inconsistent with config".into()));
    }
    Ok(())
}

/// Pre-activation `W_x x + W_h h + W_b w`, summed left to right. The
/// tape forward and the reference implementation use the same order so
/// trajectories agree bit for bit.
fn integrate_preact(
    params: &RiiuParams,
    h: &Vector,
    x: &Vector,
    w: &Vector,
) -> Result<Vector> {
    let ax = params.w_x.matvec(x)?;
    let ah = params.w_h.matvec(h)?;
    let aw = params.w_b.matvec(w)?;
    let mut pre = Vector::zeros(ax.dim());
    for i in 0..pre.dim() {
        pre[i] = (ax[i] + ah[i]) + aw[i];
    }
    Ok(pre)
}

/// The reflexive net: `mu' = W2 gelu(W1 [h'; mu; grad] + b1) + b2`.
fn reflect(params: &RiiuParams, h_new: &Vector, mu: &Vector, grad_h: &Vector) -> Result<Vector> {
    let g_in = Vector::concat(&[h_new, mu, grad_h]);
    let mut a1 = params.g_w1.matvec(&g_in)?;
    for i in 0..a1.dim() {
        a1[i] = gelu(a1[i] + params.g_b1.get(i, 0));
    }
    let mut mu_new = params.g_w2.matvec(&a1)?;
    for i in 0..mu_new.dim() {
        mu_new[i] += params.g_b2.get(i, 0);
    }
    Ok(mu_new)
}

/// One full step; mutates `state` in place.
pub fn riiu_step(
    params: &RiiuParams,
    state: &mut RiiuState,
    x: &Vector,
    w: &Vector,
    cfg: &CellConfig,
) -> Result<StepDiag> {
    check_step_shapes(params, state, x, w, cfg)?;
    let mut diag = StepDiag::default();

    let pre = integrate_preact(params, &state.h, x, w)?;
    let mut h_new = Vector::zeros(cfg.h_dim);
    for i in 0..cfg.h_dim {
        h_new[i] = gelu(pre[i]);
    }
    let guard = norm_guard_factor(&h_new);
    if guard < 1.0 {
        h_new = h_new.scale(guard);
    }

    let mu_new = if cfg.meta_enabled {
        let z_pre = Vector::concat(&[&h_new, &state.mu]);
        let window = state.buffer.window_after_push(&z_pre);
        let eval = eval_phi_at(&window, window.len() - 1, &cfg.phi);
        diag.degenerate_spectrum |= eval.degenerate;
        let grad_h = Vector::from_slice(&eval.grad.as_slice()[..cfg.h_dim]);
        let mut mu = reflect(params, &h_new, &state.mu, &grad_h)?;
        let guard = norm_guard_factor(&mu);
        if guard < 1.0 {
            mu = mu.scale(guard);
        }
        mu
    } else {
        state.mu.clone()
    };

    let z = Vector::concat(&[&h_new, &mu_new]);
    state.buffer.push(z)?;
    let phi_new = auto_phi_rel(&state.buffer.window(), &cfg.phi);

    let cat = Vector::concat(&[&h_new, &mu_new, &Vector::from_slice(&[phi_new])]);
    let b_new = params.w_o.matvec(&cat)?;

    state.h = h_new;
    state.mu = mu_new;
    state.phi_hat = phi_new;
    state.broadcast = b_new;
    Ok(diag)
}

/// Ablation step with the reflexive net removed: `mu' = mu`.
pub fn riiu_step_no_meta(
    params: &RiiuParams,
    state: &mut RiiuState,
    x: &Vector,
    w: &Vector,
    cfg: &CellConfig,
) -> Result<StepDiag> {
    let mut no_meta = cfg.clone();
    no_meta.meta_enabled = false;
    riiu_step(params, state, x, w, &no_meta)
}

/// Plain tanh recurrence baseline: `h' = tanh(W_x x + W_h h)`.
pub fn elman_step(w_x: &Matrix, w_h: &Matrix, h: &Vector, x: &Vector) -> Result<Vector> {
    let ax = w_x.matvec(x)?;
    let ah = w_h.matvec(h)?;
    let mut out = Vector::zeros(ax.dim());
    for i in 0..out.dim() {
        out[i] = (ax[i] + ah[i]).tanh();
    }
    Ok(out)
}

/// Weights of the gated recurrent baseline. Biases default to zero, in
/// which case the update matches the bias-free textbook equations; the
/// gate-forcing tests drive them to saturation.
#[derive(Debug, Clone)]
pub struct GruParams {
    pub w_z: Matrix,
    pub u_z: Matrix,
    pub b_z: Vector,
    pub w_r: Matrix,
    pub u_r: Matrix,
    pub b_r: Vector,
    pub w_h: Matrix,
    pub u_h: Matrix,
    pub b_h: Vector,
}

impl GruParams {
    pub fn init(rng: &mut RngStream, in_dim: usize, h_dim: usize) -> Self {
        let mut uniform = |rows: usize, cols: usize| {
            let bound = 1.0 / (cols as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| rng.range(-bound, bound))
        };
        Self {
            w_z: uniform(h_dim, in_dim),
            u_z: uniform(h_dim, h_dim),
            b_z: Vector::zeros(h_dim),
            w_r: uniform(h_dim, in_dim),
            u_r: uniform(h_dim, h_dim),
            b_r: Vector::zeros(h_dim),
            w_h: uniform(h_dim, in_dim),
            u_h: uniform(h_dim, h_dim),
            b_h: Vector::zeros(h_dim),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Standard gated update:
/// `z = sigma(W_z x + U_z h)`, `r = sigma(W_r x + U_r h)`,
/// `cand = tanh(W_h x + U_h (r . h))`, `h' = (1-z) . h + z . cand`.
pub fn gru_step(params: &GruParams, h: &Vector, x: &Vector) -> Result<Vector> {
    let n = h.dim();
    let zx = params.w_z.matvec(x)?;
    let zh = params.u_z.matvec(h)?;
    let rx = params.w_r.matvec(x)?;
    let rh = params.u_r.matvec(h)?;
    let mut rgate = Vector::zeros(n);
    let mut zgate = Vector::zeros(n);
    for i in 0..n {
        zgate[i] = sigmoid(zx[i] + zh[i] + params.b_z[i]);
        rgate[i] = sigmoid(rx[i] + rh[i] + params.b_r[i]);
    }
    let mut gated = Vector::zeros(n);
    for i in 0..n {
        gated[i] = rgate[i] * h[i];
    }
    let cx = params.w_h.matvec(x)?;
    let ch = params.u_h.matvec(&gated)?;
    let mut out = Vector::zeros(n);
    for i in 0..n {
        let cand = (cx[i] + ch[i] + params.b_h[i]).tanh();
        out[i] = (1.0 - zgate[i]) * h[i] + zgate[i] * cand;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::RiiuParams;

    fn small_cfg() -> CellConfig {
        let mut cfg = CellConfig::standard(6);
        cfg.h_dim = 8;
        cfg.mu_dim = 4;
        cfg.buf_len = 12;
        cfg.phi = PhiConfig::new(4);
        cfg
    }

    fn random_vec(rng: &mut RngStream, d: usize) -> Vector {
        Vector::from_vec((0..d).map(|_| rng.normal()).collect())
    }

    #[test]
    fn zero_params_fixed_point() {
        let cfg = small_cfg();
        let params = RiiuParams::zeros(&cfg);
        let mut state = RiiuState::zeros(&cfg);
        let mut rng = RngStream::new(50);
        for _ in 0..5 {
            let x = random_vec(&mut rng, cfg.in_dim);
            riiu_step(&params, &mut state, &x, &Vector::zeros(cfg.h_dim), &cfg).unwrap();
            assert!(state.h.as_slice().iter().all(|&v| v == 0.0));
            assert!(state.mu.as_slice().iter().all(|&v| v == 0.0));
            assert_eq!(state.phi_hat, 0.0);
            assert!(state.broadcast.as_slice().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let cfg = small_cfg();
        let params = RiiuParams::zeros(&cfg);
        let mut state = RiiuState::zeros(&cfg);
        let bad_x = Vector::zeros(cfg.in_dim + 1);
        assert!(riiu_step(&params, &mut state, &bad_x, &Vector::zeros(cfg.h_dim), &cfg).is_err());
    }

    #[test]
    fn no_meta_freezes_mu_and_h_path_matches_full() {
        let cfg = small_cfg();
        let mut rng = RngStream::new(51);
        let params = RiiuParams::init(&mut rng, &cfg);
        let mut full = RiiuState::zeros(&cfg);
        let mut ablated = RiiuState::zeros(&cfg);
        for _ in 0..20 {
            let x = random_vec(&mut rng, cfg.in_dim);
            let w = random_vec(&mut rng, cfg.h_dim);
            // Same w stream for both: with mu0 = 0 the h update never
            // reads mu, so the h paths agree exactly.
            let mut full_next = full.clone();
            riiu_step(&params, &mut full_next, &x, &w, &cfg).unwrap();
            riiu_step_no_meta(&params, &mut ablated, &x, &w, &cfg).unwrap();
            assert!(ablated.mu.as_slice().iter().all(|&v| v == 0.0));
            assert_eq!(ablated.h.as_slice(), full_next.h.as_slice());
            full = full_next;
            // Re-sync the full state's h so divergence through mu does
            // not accumulate into the next comparison.
            full.h = ablated.h.clone();
        }
    }

    #[test]
    fn no_meta_phi_equals_h_only_phi() {
        // The frozen meta block contributes constant zeros; padding
        // cannot change residual or total energy.
        let cfg = small_cfg();
        let mut rng = RngStream::new(52);
        let params = RiiuParams::init(&mut rng, &cfg);
        let mut state = RiiuState::zeros(&cfg);
        for _ in 0..15 {
            let x = random_vec(&mut rng, cfg.in_dim);
            riiu_step_no_meta(&params, &mut state, &x, &Vector::zeros(cfg.h_dim), &cfg).unwrap();
        }
        let window = state.buffer.window();
        let h_only: Vec<Vector> = window
            .iter()
            .map(|z| Vector::from_slice(&z.as_slice()[..cfg.h_dim]))
            .collect();
        let padded = auto_phi_rel(&window, &cfg.phi);
        let bare = auto_phi_rel(&h_only, &cfg.phi);
        assert!(
            (padded - bare).abs() < 1e-12,
            "padded {padded} bare {bare}"
        );
    }

    #[test]
    fn reduction_to_plain_gelu_recurrence() {
        // Meta off, mu0 = 0, bonus irrelevant at cell level: the h
        // trajectory must equal the bare recurrence bit for bit.
        let cfg = small_cfg();
        let mut rng = RngStream::new(53);
        let params = RiiuParams::init(&mut rng, &cfg);
        let mut state = RiiuState::zeros(&cfg);
        let mut h_plain = Vector::zeros(cfg.h_dim);
        for _ in 0..100 {
            let x = random_vec(&mut rng, cfg.in_dim);
            let w = random_vec(&mut rng, cfg.h_dim);
            riiu_step_no_meta(&params, &mut state, &x, &w, &cfg).unwrap();
            // independent plain recurrence
            let ax = params.w_x.matvec(&x).unwrap();
            let ah = params.w_h.matvec(&h_plain).unwrap();
            let aw = params.w_b.matvec(&w).unwrap();
            let mut next = Vector::zeros(cfg.h_dim);
            for i in 0..cfg.h_dim {
                next[i] = crate::gelu::gelu((ax[i] + ah[i]) + aw[i]);
            }
            h_plain = next;
            assert_eq!(state.h.as_slice(), h_plain.as_slice());
        }
    }

    #[test]
    fn phi_stays_in_unit_interval_and_broadcast_keeps_h_dim() {
        let mut cfg = small_cfg();
        cfg.mu_dim = 3; // broadcast width must not follow mu
        cfg.phi = PhiConfig::new(4);
        let mut rng = RngStream::new(54);
        let params = RiiuParams::init(&mut rng, &cfg);
        let mut state = RiiuState::zeros(&cfg);
        for _ in 0..30 {
            let x = random_vec(&mut rng, cfg.in_dim);
            let w = random_vec(&mut rng, cfg.h_dim);
            riiu_step(&params, &mut state, &x, &w, &cfg).unwrap();
            assert!((0.0..=1.0).contains(&state.phi_hat));
            assert_eq!(state.broadcast.dim(), cfg.h_dim);
        }
    }

    #[test]
    fn trajectories_are_deterministic() {
        let cfg = small_cfg();
        let run = || {
            let mut rng = RngStream::new(55);
            let params = RiiuParams::init(&mut rng, &cfg);
            let mut state = RiiuState::zeros(&cfg);
            for _ in 0..10 {
                let x = random_vec(&mut rng, cfg.in_dim);
                riiu_step(&params, &mut state, &x, &Vector::zeros(cfg.h_dim), &cfg).unwrap();
            }
            (state.h, state.mu, state.phi_hat)
        };
        let (h1, mu1, p1) = run();
        let (h2, mu2, p2) = run();
        assert_eq!(h1.as_slice(), h2.as_slice());
        assert_eq!(mu1.as_slice(), mu2.as_slice());
        assert_eq!(p1, p2);
    }

    #[test]
    fn elman_zero_weights_and_saturation() {
        let w_x = Matrix::zeros(4, 3);
        let w_h = Matrix::zeros(4, 4);
        let out = elman_step(&w_x, &w_h, &Vector::zeros(4), &Vector::zeros(3)).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));

        let big = Matrix::from_fn(4, 3, |_, _| 3.0);
        let out = elman_step(&big, &w_h, &Vector::zeros(4), &Vector::from_slice(&[1.0, 1.0, 1.0]))
            .unwrap();
        for &v in out.as_slice() {
            assert!(v > -1.0 && v < 1.0 && v > 0.999);
        }
    }

    #[test]
    fn elman_matches_hand_rolled_oracle() {
        let mut rng = RngStream::new(56);
        let w_x = Matrix::from_fn(4, 3, |_, _| rng.normal());
        let w_h = Matrix::from_fn(4, 4, |_, _| rng.normal());
        let h = random_vec(&mut rng, 4);
        let x = random_vec(&mut rng, 3);
        let got = elman_step(&w_x, &w_h, &h, &x).unwrap();
        for i in 0..4 {
            let mut acc = 0.0;
            for j in 0..3 {
                acc += w_x.get(i, j) * x[j];
            }
            for j in 0..4 {
                acc += w_h.get(i, j) * h[j];
            }
            assert!((got[i] - acc.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn gru_gate_limits() {
        let mut rng = RngStream::new(57);
        let mut params = GruParams::init(&mut rng, 3, 5);
        let h = random_vec(&mut rng, 5);
        let x = random_vec(&mut rng, 3);

        // update gate forced shut: h' ~ h
        params.b_z = Vector::from_vec(vec![-50.0; 5]);
        let out = gru_step(&params, &h, &x).unwrap();
        for i in 0..5 {
            assert!((out[i] - h[i]).abs() < 1e-12);
        }

        // update gate forced open: h' ~ candidate
        params.b_z = Vector::from_vec(vec![50.0; 5]);
        let out = gru_step(&params, &h, &x).unwrap();
        let rx = params.w_r.matvec(&x).unwrap();
        let rh = params.u_r.matvec(&h).unwrap();
        let mut gated = Vector::zeros(5);
        for i in 0..5 {
            gated[i] = sigmoid(rx[i] + rh[i]) * h[i];
        }
        let cx = params.w_h.matvec(&x).unwrap();
        let ch = params.u_h.matvec(&gated).unwrap();
        for i in 0..5 {
            let cand = (cx[i] + ch[i]).tanh();
            assert!((out[i] - cand).abs() < 1e-12);
        }
    }

    #[test]
    fn gru_matches_equation_transcription() {
        let mut rng = RngStream::new(58);
        let params = GruParams::init(&mut rng, 3, 4);
        let h = random_vec(&mut rng, 4);
        let x = random_vec(&mut rng, 3);
        let got = gru_step(&params, &h, &x).unwrap();
        let dot = |m: &Matrix, i: usize, v: &Vector| -> f64 {
            (0..v.dim()).map(|j| m.get(i, j) * v[j]).sum()
        };
        let mut gated = Vector::zeros(4);
        for j in 0..4 {
            let rj = sigmoid(dot(&params.w_r, j, &x) + dot(&params.u_r, j, &h));
            gated[j] = rj * h[j];
        }
        for i in 0..4 {
            let z = sigmoid(dot(&params.w_z, i, &x) + dot(&params.u_z, i, &h));
            let cand = (dot(&params.w_h, i, &x) + dot(&params.u_h, i, &gated)).tanh();
            let expect = (1.0 - z) * h[i] + z * cand;
            assert!((got[i] - expect).abs() < 1e-12, "i {i}");
        }
    }
}
