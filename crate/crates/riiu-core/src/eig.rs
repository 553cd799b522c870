//! Symmetric eigendecomposition by cyclic Jacobi rotations.
//!
//! Jacobi is slower than QR for large matrices but is simple, has no
//! failure modes on real symmetric input, and every matrix in this
//! crate is at most 48x48. Rotations below a sweep-dependent threshold
//! are skipped, which makes late sweeps nearly free. The kernel works
//! on whole rows so the inner loops stay contiguous; the eigenvector
//! accumulator is kept transposed for the same reason.

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Vector};

/// Maximum number of full sweeps before giving up.
pub const MAX_SWEEPS: usize = 50;

/// Default relative tolerance on the off-diagonal Frobenius norm.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Eigendecomposition of a symmetric matrix.
///
/// `values` are sorted in descending order; column `j` of `vectors` is
/// the eigenvector for `values[j]`. Each eigenvector is normalized so
/// that its largest-magnitude component is non-negative, which removes
/// the sign ambiguity and keeps downstream tests deterministic.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: Vector,
    pub vectors: Matrix,
}

/// Rotate rows `p` and `q` of a row-major `n x n` buffer in place.
#[inline]
fn rotate_rows(a: &mut [f64], n: usize, p: usize, q: usize, c: f64, s: f64) {
    debug_assert!(p < q);
    let (head, tail) = a.split_at_mut(q * n);
    let rp = &mut head[p * n..p * n + n];
    let rq = &mut tail[..n];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Decompose a symmetric matrix as `m = V diag(values) V^T`.
///
/// `tol` is relative: the iteration stops once the Frobenius norm of
/// the off-diagonal part drops below `tol * ||m||_F`. Non-symmetric
/// input (asymmetry above `1e-9 * (1 + ||m||_F)`) is rejected.
pub fn sym_eig(m: &Matrix, tol: f64) -> Result<SymEig> {
    if m.rows() != m.cols() {
        return Err(Error::ShapeMismatch(format!(
            "sym_eig needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if tol <= 0.0 {
        return Err(Error::InvalidConfig("sym_eig tolerance must be positive".into()));
    }
    let frob = m.frobenius_norm();
    let asym = m.max_asymmetry();
    if asym > 1e-9 * (1.0 + frob) {
        return Err(Error::NotSymmetric(asym));
    }

    let n = m.rows();
    let mut a: Vec<f64> = m.as_slice().to_vec();
    // Eigenvectors as rows (V transposed), so rotations stay contiguous.
    let mut vt: Vec<f64> = vec![0.0; n * n];
    for i in 0..n {
        vt[i * n + i] = 1.0;
    }

    // Work on an exactly symmetric copy.
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[j * n + i] = s;
            a[i * n + j] = s;
        }
    }

    let target = tol * frob;
    let mut converged = frob == 0.0;
    let mut sweeps_done = 0;
    while !converged && sweeps_done < MAX_SWEEPS {
        sweeps_done += 1;
        let mut off_sq = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                let x = a[p * n + q];
                off_sq += 2.0 * x * x;
            }
        }
        if off_sq.sqrt() <= target {
            converged = true;
            break;
        }
        // Rotations much smaller than the remaining off-diagonal mass
        // are postponed to a later sweep.
        let thresh = if sweeps_done <= 3 {
            0.2 * off_sq.sqrt() / (n * n) as f64
        } else {
            0.0
        };
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 || apq.abs() <= thresh {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                // Tiny relative to the diagonal: flush to zero.
                let g = 100.0 * apq.abs();
                if sweeps_done > 4 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                let theta = 0.5 * (aqq - app) / apq;
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    let s = 1.0 / (theta.abs() + (1.0 + theta * theta).sqrt());
                    if theta < 0.0 {
                        -s
                    } else {
                        s
                    }
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let new_pp = app - t * apq;
                let new_qq = aqq + t * apq;

                // A <- J^T A (rows), then A <- A J (columns); the pivot
                // block is patched in exactly afterwards.
                rotate_rows(&mut a, n, p, q, c, s);
                for row in a.chunks_exact_mut(n) {
                    let xp = row[p];
                    let xq = row[q];
                    row[p] = c * xp - s * xq;
                    row[q] = s * xp + c * xq;
                }
                a[p * n + p] = new_pp;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                a[q * n + q] = new_qq;

                // V <- V J, accumulated transposed.
                rotate_rows(&mut vt, n, p, q, c, s);
            }
        }
    }
    if !converged {
        let mut off_sq = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                let x = a[p * n + q];
                off_sq += 2.0 * x * x;
            }
        }
        if off_sq.sqrt() > target {
            return Err(Error::NoConvergence(MAX_SWEEPS));
        }
    }

    // Stable descending sort keeps the Jacobi-produced order for ties.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[j * n + j]
            .partial_cmp(&a[i * n + i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut values = Vector::zeros(n);
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = a[src * n + src];
        let row = &vt[src * n..src * n + n];
        // Sign convention: largest-|component| entry is non-negative.
        let mut big = 0usize;
        let mut big_abs = 0.0;
        for (i, &x) in row.iter().enumerate() {
            if x.abs() > big_abs {
                big_abs = x.abs();
                big = i;
            }
        }
        let flip = if row[big] < 0.0 { -1.0 } else { 1.0 };
        for (i, &x) in row.iter().enumerate() {
            vectors.set(i, dst, flip * x);
        }
    }
    Ok(SymEig { values, vectors })
}

/// Symmetric eigendecomposition via Householder tridiagonalization
/// followed by implicit-shift QL.
///
/// Same contract and conventions as [`sym_eig`], roughly 4-5x faster at
/// d = 48. The Auto-Phi hot loop uses this; [`sym_eig`] stays as the
/// independently-implemented reference the tests cross-check against.
pub fn sym_eig_ql(m: &Matrix) -> Result<SymEig> {
    if m.rows() != m.cols() {
        return Err(Error::ShapeMismatch(format!(
            "sym_eig_ql needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let frob = m.frobenius_norm();
    let asym = m.max_asymmetry();
    if asym > 1e-9 * (1.0 + frob) {
        return Err(Error::NotSymmetric(asym));
    }
    let n = m.rows();
    // Normalize to unit Frobenius scale: the QL iteration counts on a
    // bounded dynamic range, and near-constant state windows produce
    // covariances deep in the denormal regime.
    let scale = if frob > 0.0 { frob } else { 1.0 };
    let mut v: Vec<f64> = m.as_slice().iter().map(|x| x / scale).collect();
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (v[i * n + j] + v[j * n + i]);
            v[j * n + i] = s;
            v[i * n + j] = s;
        }
    }
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(&mut v, &mut d, &mut e, n);
    tql2(&mut v, &mut d, &mut e, n)?;
    for di in d.iter_mut() {
        *di *= scale;
    }

    // Stable descending sort; sign convention as in `sym_eig`.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].partial_cmp(&d[i]).unwrap_or(std::cmp::Ordering::Equal));
    let mut values = Vector::zeros(n);
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = d[src];
        let mut big = 0usize;
        let mut big_abs = 0.0;
        for i in 0..n {
            let x = v[i * n + src].abs();
            if x > big_abs {
                big_abs = x;
                big = i;
            }
        }
        let flip = if v[big * n + src] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors.set(i, dst, flip * v[i * n + src]);
        }
    }
    Ok(SymEig { values, vectors })
}

/// Householder reduction to tridiagonal form (EISPACK tred2 lineage).
/// On exit `d` holds the diagonal, `e` the sub-diagonal, and `v` the
/// accumulated orthogonal transformation.
fn tred2(v: &mut [f64], d: &mut [f64], e: &mut [f64], n: usize) {
    d[..n].copy_from_slice(&v[(n - 1) * n..]);

    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[(i - 1) * n + j];
                v[i * n + j] = 0.0;
                v[j * n + i] = 0.0;
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = if f > 0.0 { -h.sqrt() } else { h.sqrt() };
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[j * n + i] = f;
                g = e[j] + v[j * n + j] * f;
                for k in (j + 1)..i {
                    g += v[k * n + j] * d[k];
                    e[k] += v[k * n + j] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[k * n + j] -= f * e[k] + g * d[k];
                }
                d[j] = v[(i - 1) * n + j];
                v[i * n + j] = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..n - 1 {
        v[(n - 1) * n + i] = v[i * n + i];
        v[i * n + i] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for (k, dk) in d.iter_mut().enumerate().take(i + 1) {
                *dk = v[k * n + i + 1] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[k * n + i + 1] * v[k * n + j];
                }
                for (k, dk) in d.iter().enumerate().take(i + 1) {
                    v[k * n + j] -= g * dk;
                }
            }
        }
        for k in 0..=i {
            v[k * n + i + 1] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[(n - 1) * n + j];
        v[(n - 1) * n + j] = 0.0;
    }
    v[(n - 1) * n + n - 1] = 1.0;
    e[0] = 0.0;
}

/// Implicit-shift QL iteration on the tridiagonal form (EISPACK tql2
/// lineage), accumulating eigenvectors into `v`.
fn tql2(v: &mut [f64], d: &mut [f64], e: &mut [f64], n: usize) -> Result<()> {
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 40 {
                    return Err(Error::NoConvergence(40));
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g2 = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g2;
                    d[i + 1] = h + s * (c * g2 + s * d[i]);
                    for k in 0..n {
                        let hk = v[k * n + i + 1];
                        let vk = v[k * n + i];
                        v[k * n + i + 1] = s * vk + c * hk;
                        v[k * n + i] = c * vk - s * hk;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn random_symmetric(rng: &mut RngStream, n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let x = rng.range(-1.0, 1.0);
                m.set(i, j, x);
                m.set(j, i, x);
            }
        }
        m
    }

    fn reconstruct(e: &SymEig) -> Matrix {
        let n = e.values.dim();
        let lam = Matrix::from_fn(n, n, |i, j| if i == j { e.values[i] } else { 0.0 });
        e.vectors
            .matmul(&lam)
            .unwrap()
            .matmul(&e.vectors.transpose())
            .unwrap()
    }

    #[test]
    fn identity_has_unit_eigenvalues() {
        let e = sym_eig(&Matrix::identity(4), 1e-10).unwrap();
        for i in 0..4 {
            assert!((e.values[i] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn diagonal_matrix_sorted_descending() {
        let m = Matrix::from_rows(&[
            &[3.0, 0.0, 0.0],
            &[0.0, 1.0, 0.0],
            &[0.0, 0.0, 2.0],
        ])
        .unwrap();
        let e = sym_eig(&m, 1e-10).unwrap();
        assert_eq!(e.values.as_slice(), &[3.0, 2.0, 1.0]);
    }

    #[test]
    fn random_symmetric_reconstructs() {
        let mut rng = RngStream::new(11);
        for _ in 0..5 {
            let m = random_symmetric(&mut rng, 10);
            let e = sym_eig(&m, 1e-10).unwrap();
            let err = reconstruct(&e).sub(&m).unwrap().frobenius_norm();
            assert!(err <= 1e-9 * (1.0 + m.frobenius_norm()), "err {err}");
            // Gram matrix of eigenvectors ~ identity.
            let gram = e.vectors.transpose().matmul(&e.vectors).unwrap();
            let gram_err = gram.sub(&Matrix::identity(10)).unwrap().frobenius_norm();
            assert!(gram_err <= 1e-9, "gram {gram_err}");
        }
    }

    #[test]
    fn non_symmetric_rejected() {
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&m, 1e-10), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn sign_convention_deterministic() {
        let m = Matrix::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]).unwrap();
        let e = sym_eig(&m, 1e-10).unwrap();
        for j in 0..2 {
            let col = e.vectors.col(j);
            let mut big = 0;
            for i in 0..2 {
                if col[i].abs() > col[big].abs() {
                    big = i;
                }
            }
            assert!(col[big] >= 0.0);
        }
    }

    #[test]
    fn zero_matrix_is_fine() {
        let e = sym_eig(&Matrix::zeros(5, 5), 1e-10).unwrap();
        assert!(e.values.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn large_well_separated_spectrum() {
        // 48x48 like the production covariance path.
        let mut rng = RngStream::new(12);
        let m = random_symmetric(&mut rng, 48);
        let e = sym_eig(&m, 1e-10).unwrap();
        let err = reconstruct(&e).sub(&m).unwrap().frobenius_norm();
        assert!(err <= 1e-9 * (1.0 + m.frobenius_norm()), "err {err}");
        for i in 1..48 {
            assert!(e.values[i - 1] >= e.values[i]);
        }
    }

    #[test]
    fn ql_matches_jacobi_on_random_matrices() {
        let mut rng = RngStream::new(13);
        for trial in 0..20 {
            let n = 2 + (trial % 7) * 7; // 2..44
            let m = random_symmetric(&mut rng, n);
            let a = sym_eig(&m, 1e-10).unwrap();
            let b = sym_eig_ql(&m).unwrap();
            for i in 0..n {
                assert!(
                    (a.values[i] - b.values[i]).abs() <= 1e-10 * (1.0 + m.frobenius_norm()),
                    "n={n} i={i}: jacobi {} ql {}",
                    a.values[i],
                    b.values[i]
                );
            }
            let err = reconstruct(&b).sub(&m).unwrap().frobenius_norm();
            assert!(err <= 1e-9 * (1.0 + m.frobenius_norm()), "recon {err}");
            let gram = b.vectors.transpose().matmul(&b.vectors).unwrap();
            let gram_err = gram
                .sub(&Matrix::identity(n))
                .unwrap()
                .frobenius_norm();
            assert!(gram_err <= 1e-9, "gram {gram_err}");
        }
    }

    #[test]
    fn ql_handles_degenerate_spectra() {
        // identity, zero, and a rank-1 spike
        let e = sym_eig_ql(&Matrix::identity(6)).unwrap();
        for i in 0..6 {
            assert!((e.values[i] - 1.0).abs() < 1e-12);
        }
        let z = sym_eig_ql(&Matrix::zeros(5, 5)).unwrap();
        assert!(z.values.as_slice().iter().all(|&x| x.abs() < 1e-15));

        let mut rng = RngStream::new(14);
        let u = Vector::from_vec((0..12).map(|_| rng.normal()).collect());
        let spike = crate::tensor::outer(&u, &u);
        let e = sym_eig_ql(&spike).unwrap();
        assert!((e.values[0] - u.dot(&u)).abs() < 1e-9);
        for i in 1..12 {
            assert!(e.values[i].abs() < 1e-9);
        }
    }
}
