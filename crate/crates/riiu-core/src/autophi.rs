//! The relative Auto-Phi integration surrogate.
//!
//! Given a window of state vectors, form their covariance `S`, project
//! away the top-`r` principal directions `U_r`, and report the energy
//! the projection cannot explain:
//!
//! ```text
//! phi = ||S - U_r U_r^T S||_F / (||S||_F + eps)   in [0, 1]
//! ```
//!
//! A seam that splits the state into independent halves leaves the
//! covariance low-rank, so the residual (and the score) collapses;
//! strongly coupled states keep energy outside every rank-`r` subspace.
//!
//! The gradient with respect to one window sample treats `U_r` as
//! constant (fixed-subspace rule). For simple spectra this equals the
//! true first-order derivative through the eigenvalues, and it avoids
//! differentiating eigenvectors near crossings. Both claims are
//! exercised by the finite-difference tests below.

use crate::eig::{sym_eig_ql, SymEig};
use crate::error::{Error, Result};
use crate::tensor::{covariance, Matrix, Vector};

/// How a surrogate built from several independent blocks is normalized.
///
/// `Standard` is the plain formula on the joint covariance; residual
/// and total norms compose across blocks as root-sum-squares.
/// `SumOfNorms` replaces both Frobenius norms of the joint matrix by
/// sums of per-block norms, which is the normalization under which the
/// scores of independent blocks add exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    Standard,
    SumOfNorms,
}

/// Configuration of the surrogate.
#[derive(Debug, Clone)]
pub struct PhiConfig {
    /// Number of principal directions projected away.
    pub rank: usize,
    /// Denominator regularizer.
    pub epsilon: f64,
    pub normalization: Normalization,
}

impl PhiConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            epsilon: 1e-9,
            normalization: Normalization::Standard,
        }
    }

    pub fn validate(&self, state_dim: usize) -> Result<()> {
        if self.rank == 0 || self.rank > state_dim {
            return Err(Error::InvalidConfig(format!(
                "phi rank {} out of range for state dim {}",
                self.rank, state_dim
            )));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig("phi epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Ring buffer over the concatenated per-step states feeding the
/// covariance window.
///
/// Single-writer; pushing past capacity overwrites the oldest entry.
#[derive(Debug, Clone)]
pub struct SlidingBuffer {
    dim: usize,
    capacity: usize,
    ring: Vec<Vector>,
    /// Oldest entry once the ring is full; next slot to overwrite.
    write: usize,
}

impl SlidingBuffer {
    pub fn new(capacity: usize, dim: usize) -> Self {
        assert!(capacity >= 1, "buffer capacity must be positive");
        Self {
            dim,
            capacity,
            ring: Vec::with_capacity(capacity),
            write: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.ring.len()
    }

    pub fn push(&mut self, z: Vector) -> Result<()> {
        if z.dim() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "buffer expects dim {}, got {}",
                self.dim,
                z.dim()
            )));
        }
        if self.ring.len() < self.capacity {
            self.ring.push(z);
        } else {
            self.ring[self.write] = z;
            self.write = (self.write + 1) % self.capacity;
        }
        Ok(())
    }

    /// Window contents, oldest first.
    pub fn window(&self) -> Vec<Vector> {
        let mut out = Vec::with_capacity(self.ring.len());
        if self.ring.len() < self.capacity {
            out.extend_from_slice(&self.ring);
        } else {
            out.extend_from_slice(&self.ring[self.write..]);
            out.extend_from_slice(&self.ring[..self.write]);
        }
        out
    }

    /// The window as it would look immediately after pushing `z`:
    /// `z` is the newest entry and the oldest is evicted if the ring
    /// is full. The buffer itself is not modified.
    pub fn window_after_push(&self, z: &Vector) -> Vec<Vector> {
        let mut out = self.window();
        if out.len() == self.capacity {
            out.remove(0);
        }
        out.push(z.clone());
        out
    }
}

/// Threshold under which the residual is treated as identically zero;
/// the surrogate is flat there and the gradient convention is zero.
const FLAT_RESIDUAL: f64 = 1e-12;

/// Eigenvalue gap below which the fixed-subspace choice of `U_r` is
/// ambiguous; flagged in diagnostics, the computed gradient is kept.
const DEGENERATE_GAP: f64 = 1e-12;

/// Value and fixed-subspace gradient of the surrogate at one sample.
#[derive(Debug, Clone)]
pub struct PhiEval {
    pub value: f64,
    /// Gradient with respect to the sample at the requested index.
    pub grad: Vector,
    /// Gap between eigenvalues `r` and `r+1`, when both exist.
    pub eigengap: Option<f64>,
    /// True when the gap is numerically zero and the projector choice
    /// followed the solver's tie order.
    pub degenerate: bool,
}

/// Residual and total Frobenius norms of one covariance at a given
/// rank. The residual is computed by explicit projection,
/// `||S - U_r (U_r^T S)||_F`, not from eigenvalue tail sums.
pub fn residual_norms(sigma: &Matrix, rank: usize) -> Result<(f64, f64)> {
    let eig = sym_eig_ql(sigma)?;
    Ok(residual_norms_with_eig(sigma, &eig, rank))
}

fn residual_norms_with_eig(sigma: &Matrix, eig: &SymEig, rank: usize) -> (f64, f64) {
    let d = sigma.rows();
    let r = rank.min(d);
    let tot = sigma.frobenius_norm();
    // M = U_r^T S (r x d), then residual = S - U_r M.
    let mut m = Matrix::zeros(r, d);
    for k in 0..r {
        for j in 0..d {
            let mut acc = 0.0;
            for l in 0..d {
                acc += eig.vectors.get(l, k) * sigma.get(l, j);
            }
            m.set(k, j, acc);
        }
    }
    let mut res_sq = 0.0;
    for i in 0..d {
        for j in 0..d {
            let mut pij = 0.0;
            for k in 0..r {
                pij += eig.vectors.get(i, k) * m.get(k, j);
            }
            let rij = sigma.get(i, j) - pij;
            res_sq += rij * rij;
        }
    }
    (res_sq.sqrt(), tot)
}

/// The surrogate on an explicit covariance matrix.
pub fn phi_from_cov(sigma: &Matrix, cfg: &PhiConfig) -> Result<f64> {
    let (res, tot) = residual_norms(sigma, cfg.rank)?;
    Ok((res / (tot + cfg.epsilon)).clamp(0.0, 1.0))
}

/// Value and fixed-subspace gradient with respect to `samples[index]`.
///
/// Fewer than two samples is the warm-up regime: value and gradient
/// are zero by convention. A window of `n` samples has covariance rank
/// at most `n - 1`, so while `n <= rank + 1` the rank-`r` projection is
/// complete and the surrogate is exactly zero; those cases return
/// without an eigendecomposition.
pub fn eval_phi_at(samples: &[Vector], index: usize, cfg: &PhiConfig) -> PhiEval {
    let dim = samples.first().map_or(0, |s| s.dim());
    if samples.len() < 2 || samples.len() <= cfg.rank + 1 {
        return PhiEval {
            value: 0.0,
            grad: Vector::zeros(dim),
            eigengap: None,
            degenerate: false,
        };
    }
    assert!(index < samples.len(), "sample index out of range");
    let sigma = covariance(samples).expect("well-formed sample window");
    let eig = sym_eig_ql(&sigma).expect("covariance eigendecomposition");
    let d = sigma.rows();
    let r = cfg.rank.min(d);
    let (res, tot) = residual_norms_with_eig(&sigma, &eig, r);
    let value = (res / (tot + cfg.epsilon)).clamp(0.0, 1.0);

    let eigengap = if r >= 1 && r < d {
        Some(eig.values[r - 1] - eig.values[r])
    } else {
        None
    };
    let degenerate = eigengap.is_some_and(|g| g.abs() < DEGENERATE_GAP);

    if res <= FLAT_RESIDUAL * (1.0 + tot) {
        return PhiEval {
            value,
            grad: Vector::zeros(d),
            eigengap,
            degenerate,
        };
    }

    // d phi / d S with U_r held fixed, P = I - U_r U_r^T:
    //   G = (P S + S P) / (2 res (tot + eps)) - res S / (tot (tot + eps)^2)
    // and then d phi / d z_k = (2/N) G (z_k - mean).
    let n = samples.len() as f64;
    let mut mean = Vector::zeros(d);
    for s in samples {
        mean.axpy(1.0, s);
    }
    mean = mean.scale(1.0 / n);
    let c = samples[index].sub(&mean);

    let denom = tot + cfg.epsilon;
    let sc = sigma.matvec(&c).expect("shape");
    let pc = project_out(&eig, r, &c);
    let spc = sigma.matvec(&pc).expect("shape");
    let psc = project_out(&eig, r, &sc);

    let a = 1.0 / (2.0 * res * denom);
    let b = res / (tot * denom * denom);
    let mut grad = Vector::zeros(d);
    for i in 0..d {
        grad[i] = (2.0 / n) * (a * (psc[i] + spc[i]) - b * sc[i]);
    }
    PhiEval {
        value,
        grad,
        eigengap,
        degenerate,
    }
}

/// `v - U_r (U_r^T v)` for the top-`r` eigenvectors.
fn project_out(eig: &SymEig, r: usize, v: &Vector) -> Vector {
    let d = v.dim();
    let mut out = v.clone();
    for k in 0..r {
        let mut ck = 0.0;
        for i in 0..d {
            ck += eig.vectors.get(i, k) * v[i];
        }
        for i in 0..d {
            out[i] -= ck * eig.vectors.get(i, k);
        }
    }
    out
}

/// The surrogate over a sample window; zero while fewer than two
/// samples are available, and exactly zero while the window holds at
/// most `rank + 1` samples (see [`eval_phi_at`]).
pub fn auto_phi_rel(samples: &[Vector], cfg: &PhiConfig) -> f64 {
    if samples.len() < 2 || samples.len() <= cfg.rank + 1 {
        return 0.0;
    }
    let sigma = covariance(samples).expect("well-formed sample window");
    phi_from_cov(&sigma, cfg).expect("valid covariance")
}

/// Fixed-subspace gradient with respect to `samples[index]`.
pub fn grad_auto_phi(samples: &[Vector], index: usize, cfg: &PhiConfig) -> Vector {
    eval_phi_at(samples, index, cfg).grad
}

/// Gradient Lipschitz bound `L = 2 ||S||_2 / (||S||_F + eps)`.
pub fn lipschitz_bound(sigma: &Matrix, epsilon: f64) -> Result<f64> {
    let eig = sym_eig_ql(sigma)?;
    let lam_max = eig.values[0].max(0.0);
    Ok(2.0 * lam_max / (sigma.frobenius_norm() + epsilon))
}

/// Replace `samples[index]` by one gradient-ascent step of size `eta`
/// and report the surrogate before and after.
pub fn ascent_step_check(
    samples: &[Vector],
    index: usize,
    cfg: &PhiConfig,
    eta: f64,
) -> (f64, f64) {
    let eval = eval_phi_at(samples, index, cfg);
    let mut moved: Vec<Vector> = samples.to_vec();
    moved[index].axpy(eta, &eval.grad);
    let after = auto_phi_rel(&moved, cfg);
    (eval.value, after)
}

/// Per-block residual/total norm pairs composed into a joint score.
///
/// This is the scalar composition law the dense route must reproduce:
/// root-sum-square under `Standard`, plain sums under `SumOfNorms`.
pub fn compose_phi(parts: &[(f64, f64)], epsilon: f64, norm: Normalization) -> f64 {
    match norm {
        Normalization::Standard => {
            let res = parts.iter().map(|(r, _)| r * r).sum::<f64>().sqrt();
            let tot = parts.iter().map(|(_, t)| t * t).sum::<f64>().sqrt();
            res / (tot + epsilon)
        }
        Normalization::SumOfNorms => {
            let res: f64 = parts.iter().map(|(r, _)| r).sum();
            let tot: f64 = parts.iter().map(|(_, t)| t).sum();
            res / (tot + epsilon)
        }
    }
}

/// Joint surrogate of independent blocks, computed the long way:
/// assemble the block-diagonal covariance, embed each block's top-`r_b`
/// eigenvectors into a joint projector, and measure the joint residual
/// matrix. Used to verify the composition laws against [`compose_phi`].
pub fn phi_block_diag_dense(
    blocks: &[(&Matrix, usize)],
    epsilon: f64,
    norm: Normalization,
) -> Result<f64> {
    if blocks.is_empty() {
        return Err(Error::InvalidConfig("no blocks".into()));
    }
    let total_dim: usize = blocks.iter().map(|(b, _)| b.rows()).sum();
    let total_rank: usize = blocks.iter().map(|(_, r)| *r).sum();

    let mut joint = Matrix::zeros(total_dim, total_dim);
    let mut u = Matrix::zeros(total_dim, total_rank);
    let mut row0 = 0;
    let mut col0 = 0;
    for (b, r) in blocks {
        let d = b.rows();
        if b.cols() != d {
            return Err(Error::ShapeMismatch("block not square".into()));
        }
        if *r > d {
            return Err(Error::InvalidConfig("block rank exceeds block dim".into()));
        }
        for i in 0..d {
            for j in 0..d {
                joint.set(row0 + i, row0 + j, b.get(i, j));
            }
        }
        let eig = crate::eig::sym_eig(b, crate::eig::DEFAULT_TOL)?;
        for k in 0..*r {
            for i in 0..d {
                u.set(row0 + i, col0 + k, eig.vectors.get(i, k));
            }
        }
        row0 += d;
        col0 += r;
    }

    let m = u.transpose().matmul(&joint)?;
    let proj = u.matmul(&m)?;
    let resid = joint.sub(&proj)?;

    match norm {
        Normalization::Standard => Ok(resid.frobenius_norm() / (joint.frobenius_norm() + epsilon)),
        Normalization::SumOfNorms => {
            let mut res_sum = 0.0;
            let mut tot_sum = 0.0;
            let mut off = 0;
            for (b, _) in blocks {
                let d = b.rows();
                let mut block_sq = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        let x = resid.get(off + i, off + j);
                        block_sq += x * x;
                    }
                }
                res_sum += block_sq.sqrt();
                tot_sum += b.frobenius_norm();
                off += d;
            }
            Ok(res_sum / (tot_sum + epsilon))
        }
    }
}
