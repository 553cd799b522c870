//! Straight-line reference implementations used as independent oracles.
//!
//! These deliberately avoid the production composition: raw index
//! loops instead of matrix helpers, a plain grow-and-trim list instead
//! of the ring buffer. The surrogate evaluation itself is shared; its
//! independence is covered by the dual eigensolver routes and the
//! finite-difference tests in `autophi`.

use crate::autophi::{self, PhiConfig};
use crate::cell::CellConfig;
use crate::gelu::gelu;
use crate::params::RiiuParams;
use crate::tensor::{Matrix, Vector};

/// Reference unit state: plain vectors and a list-based window.
#[derive(Debug, Clone)]
pub struct RefUnit {
    pub h: Vec<f64>,
    pub mu: Vec<f64>,
    pub phi: f64,
    pub broadcast: Vec<f64>,
    window: Vec<Vector>,
    window_cap: usize,
}

impl RefUnit {
    pub fn zeros(cfg: &CellConfig) -> Self {
        Self {
            h: vec![0.0; cfg.h_dim],
            mu: vec![0.0; cfg.mu_dim],
            phi: 0.0,
            broadcast: vec![0.0; cfg.h_dim],
            window: Vec::new(),
            window_cap: cfg.buf_len,
        }
    }
}

fn matvec_loops(m: &Matrix, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.rows()];
    for i in 0..m.rows() {
        let mut acc = 0.0;
        for (j, xj) in x.iter().enumerate() {
            acc += m.get(i, j) * xj;
        }
        out[i] = acc;
    }
    out
}

fn push_window(unit: &mut RefUnit, z: Vector) {
    unit.window.push(z);
    if unit.window.len() > unit.window_cap {
        unit.window.remove(0);
    }
}

fn window_with(unit: &RefUnit, z: &Vector) -> Vec<Vector> {
    let mut w = unit.window.clone();
    w.push(z.clone());
    if w.len() > unit.window_cap {
        w.remove(0);
    }
    w
}

/// One reference step, mirroring the four stages of the unit update.
pub fn ref_step(
    params: &RiiuParams,
    cfg: &CellConfig,
    unit: &mut RefUnit,
    x: &[f64],
    w: &[f64],
    phi_cfg: &PhiConfig,
) {
    // integrate
    let ax = matvec_loops(&params.w_x, x);
    let ah = matvec_loops(&params.w_h, &unit.h);
    let aw = matvec_loops(&params.w_b, w);
    let mut h_new = vec![0.0; cfg.h_dim];
    for i in 0..cfg.h_dim {
        h_new[i] = gelu((ax[i] + ah[i]) + aw[i]);
    }
    let guard = crate::cell::norm_guard_factor(&Vector::from_slice(&h_new));
    if guard < 1.0 {
        for v in h_new.iter_mut() {
            *v *= guard;
        }
    }

    // reflect
    let mu_new = if cfg.meta_enabled {
        let mut z_pre = h_new.clone();
        z_pre.extend_from_slice(&unit.mu);
        let z_pre = Vector::from_vec(z_pre);
        let probe = window_with(unit, &z_pre);
        let eval = autophi::eval_phi_at(&probe, probe.len() - 1, phi_cfg);
        let mut g_in = h_new.clone();
        g_in.extend_from_slice(&unit.mu);
        g_in.extend_from_slice(&eval.grad.as_slice()[..cfg.h_dim]);
        let mut a1 = matvec_loops(&params.g_w1, &g_in);
        for (i, v) in a1.iter_mut().enumerate() {
            *v = gelu(*v + params.g_b1.get(i, 0));
        }
        let mut mu = matvec_loops(&params.g_w2, &a1);
        for (i, v) in mu.iter_mut().enumerate() {
            *v += params.g_b2.get(i, 0);
        }
        let guard = crate::cell::norm_guard_factor(&Vector::from_slice(&mu));
        if guard < 1.0 {
            for v in mu.iter_mut() {
                *v *= guard;
            }
        }
        mu
    } else {
        unit.mu.clone()
    };

    // measure
    let mut z = h_new.clone();
    z.extend_from_slice(&mu_new);
    push_window(unit, Vector::from_vec(z));
    let phi_new = autophi::auto_phi_rel(&unit.window, phi_cfg);

    // broadcast
    let mut cat = h_new.clone();
    cat.extend_from_slice(&mu_new);
    cat.push(phi_new);
    let b_new = matvec_loops(&params.w_o, &cat);

    unit.h = h_new;
    unit.mu = mu_new;
    unit.phi = phi_new;
    unit.broadcast = b_new;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::{riiu_step, RiiuState};
    use crate::rng::RngStream;

    #[test]
    fn cell_trajectory_matches_reference() {
        let mut cfg = CellConfig::standard(6);
        cfg.h_dim = 10;
        cfg.mu_dim = 5;
        cfg.buf_len = 9;
        cfg.phi = PhiConfig::new(3);
        let mut rng = RngStream::new(70);
        let params = RiiuParams::init(&mut rng, &cfg);

        let mut state = RiiuState::zeros(&cfg);
        let mut unit = RefUnit::zeros(&cfg);
        for _ in 0..10 {
            let x = Vector::from_vec((0..cfg.in_dim).map(|_| rng.normal()).collect());
            let w = Vector::from_vec((0..cfg.h_dim).map(|_| rng.normal()).collect());
            riiu_step(&params, &mut state, &x, &w, &cfg).unwrap();
            ref_step(
                &params,
                &cfg,
                &mut unit,
                x.as_slice(),
                w.as_slice(),
                &cfg.phi,
            );
            for i in 0..cfg.h_dim {
                assert!((state.h[i] - unit.h[i]).abs() < 1e-12);
                assert!((state.broadcast[i] - unit.broadcast[i]).abs() < 1e-12);
            }
            for i in 0..cfg.mu_dim {
                assert!((state.mu[i] - unit.mu[i]).abs() < 1e-12);
            }
            assert!((state.phi_hat - unit.phi).abs() < 1e-12);
        }
    }

    #[test]
    fn reference_ring_semantics_match_buffer() {
        // after many pushes the list window and the ring agree
        let mut cfg = CellConfig::standard(4);
        cfg.h_dim = 6;
        cfg.mu_dim = 3;
        cfg.buf_len = 7;
        cfg.phi = PhiConfig::new(2);
        let mut rng = RngStream::new(71);
        let params = RiiuParams::init(&mut rng, &cfg);
        let mut state = RiiuState::zeros(&cfg);
        let mut unit = RefUnit::zeros(&cfg);
        for _ in 0..25 {
            let x = Vector::from_vec((0..cfg.in_dim).map(|_| rng.normal()).collect());
            let w = Vector::zeros(cfg.h_dim);
            riiu_step(&params, &mut state, &x, &w, &cfg).unwrap();
            ref_step(&params, &cfg, &mut unit, x.as_slice(), w.as_slice(), &cfg.phi);
        }
        let a = state.buffer.window();
        assert_eq!(a.len(), unit.window.len());
        for (x, y) in a.iter().zip(unit.window.iter()) {
            for i in 0..x.dim() {
                assert!((x[i] - y[i]).abs() < 1e-12);
            }
        }
    }
}
