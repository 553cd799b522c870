//! Dense vectors and matrices over `f64`.
//!
//! This is the minimal substrate for everything else in the crate:
//! row-major matrices, matrix products, the sample covariance of
//! Eq.-style sliding windows, and Frobenius norms. Problem sizes here
//! are tiny (d <= 48), so clarity wins over BLAS tricks.

use crate::error::{Error, Result};

/// Dense real vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            data: vec![0.0; dim],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self { data }
    }

    pub fn from_slice(data: &[f64]) -> Self {
        Self {
            data: data.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, c: f64) -> Vector {
        Vector::from_vec(self.data.iter().map(|x| c * x).collect())
    }

    pub fn add(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.dim(), other.dim());
        Vector::from_vec(
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.dim(), other.dim());
        Vector::from_vec(
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    /// `self += c * other`, in place.
    pub fn axpy(&mut self, c: f64, other: &Vector) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += c * b;
        }
    }

    pub fn concat(parts: &[&Vector]) -> Vector {
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.dim()).sum());
        for p in parts {
            data.extend_from_slice(p.as_slice());
        }
        Vector::from_vec(data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

/// Dense row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            data.extend_from_slice(row);
        }
        Ok(Self { rows: r, cols: c, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vector {
        Vector::from_vec((0..self.rows).map(|i| self.get(i, j)).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Standard matrix product.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let orow = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow.iter()) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Matrix-vector product.
    pub fn matvec(&self, x: &Vector) -> Result<Vector> {
        if self.cols != x.dim() {
            return Err(Error::ShapeMismatch(format!(
                "matvec {}x{} by {}",
                self.rows,
                self.cols,
                x.dim()
            )));
        }
        let mut out = Vector::zeros(self.rows);
        for i in 0..self.rows {
            let row = self.row(i);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x.as_slice().iter()) {
                acc += a * b;
            }
            out[i] = acc;
        }
        Ok(out)
    }

    /// `self^T * x` without materializing the transpose.
    pub fn matvec_transpose(&self, x: &Vector) -> Result<Vector> {
        if self.rows != x.dim() {
            return Err(Error::ShapeMismatch(format!(
                "matvec_transpose {}x{} by {}",
                self.rows,
                self.cols,
                x.dim()
            )));
        }
        let mut out = Vector::zeros(self.cols);
        for i in 0..self.rows {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            let row = self.row(i);
            for (o, &a) in out.as_mut_slice().iter_mut().zip(row.iter()) {
                *o += xi * a;
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch("matrix add".into()));
        }
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch("matrix sub".into()));
        }
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(other.data.iter()) {
            *a -= b;
        }
        Ok(out)
    }

    pub fn scale(&self, c: f64) -> Matrix {
        let mut out = self.clone();
        for a in out.data.iter_mut() {
            *a *= c;
        }
        out
    }

    /// Square root of the sum of squared entries.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Largest absolute difference between `a[i][j]` and `a[j][i]`.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols.min(self.rows) {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Rank-one matrix `a * b^T`.
pub fn outer(a: &Vector, b: &Vector) -> Matrix {
    let mut m = Matrix::zeros(a.dim(), b.dim());
    for i in 0..a.dim() {
        let ai = a[i];
        for j in 0..b.dim() {
            m.set(i, j, ai * b[j]);
        }
    }
    m
}

/// Sample covariance with divisor `N`, mean-centered.
///
/// The result is exactly symmetric by construction: only the upper
/// triangle is accumulated and then mirrored.
pub fn covariance(samples: &[Vector]) -> Result<Matrix> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: samples.len(),
        });
    }
    let d = samples[0].dim();
    if samples.iter().any(|s| s.dim() != d) {
        return Err(Error::ShapeMismatch("covariance samples have mixed dims".into()));
    }
    let n = samples.len() as f64;
    let mut mean = Vector::zeros(d);
    for s in samples {
        mean.axpy(1.0, s);
    }
    mean = mean.scale(1.0 / n);

    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for s in samples {
        for (c, (a, m)) in centered
            .iter_mut()
            .zip(s.as_slice().iter().zip(mean.as_slice().iter()))
        {
            *c = a - m;
        }
        for i in 0..d {
            let ci = centered[i];
            let row = &mut cov.as_mut_slice()[i * d..(i + 1) * d];
            for j in i..d {
                row[j] += ci * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov.get(i, j) / n;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    Ok(cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn random_matrix(rng: &mut RngStream, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.range(-1.0, 1.0))
    }

    #[test]
    fn matmul_identity() {
        let mut rng = RngStream::new(1);
        let a = random_matrix(&mut rng, 3, 3);
        let i3 = Matrix::identity(3);
        let prod = i3.matmul(&a).unwrap();
        assert_eq!(prod, a);
    }

    #[test]
    fn matmul_hand_checked() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[&[0.0], &[1.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.as_slice(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = RngStream::new(2);
        let a = random_matrix(&mut rng, 5, 5);
        let b = random_matrix(&mut rng, 5, 5);
        let c = a.matmul(&b).unwrap();
        // naive triple loop
        for i in 0..5 {
            for j in 0..5 {
                let mut acc = 0.0;
                for k in 0..5 {
                    acc += a.get(i, k) * b.get(k, j);
                }
                assert!((c.get(i, j) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch_rejected() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn covariance_of_constant_samples_is_zero() {
        let v = Vector::from_slice(&[1.0, -2.0, 3.0]);
        let samples = vec![v.clone(), v.clone(), v.clone(), v];
        let cov = covariance(&samples).unwrap();
        assert!(cov.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn covariance_hand_computed() {
        let samples = vec![
            Vector::from_slice(&[1.0, 0.0]),
            Vector::from_slice(&[-1.0, 0.0]),
        ];
        let cov = covariance(&samples).unwrap();
        assert_eq!(cov.get(0, 0), 1.0);
        assert_eq!(cov.get(0, 1), 0.0);
        assert_eq!(cov.get(1, 0), 0.0);
        assert_eq!(cov.get(1, 1), 0.0);
    }

    #[test]
    fn covariance_requires_two_samples() {
        let samples = vec![Vector::zeros(3)];
        assert!(matches!(
            covariance(&samples),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn covariance_symmetric_psd_on_random_samples() {
        let mut rng = RngStream::new(3);
        let samples: Vec<Vector> = (0..64)
            .map(|_| Vector::from_vec((0..48).map(|_| rng.normal()).collect()))
            .collect();
        let cov = covariance(&samples).unwrap();
        assert!(cov.max_asymmetry() <= 1e-12);
        let eig = crate::eig::sym_eig(&cov, 1e-10).unwrap();
        for i in 0..48 {
            assert!(eig.values[i] >= -1e-10, "eigenvalue {}", eig.values[i]);
        }
    }

    #[test]
    fn covariance_order_invariant() {
        let mut rng = RngStream::new(4);
        let mut samples: Vec<Vector> = (0..16)
            .map(|_| Vector::from_vec((0..6).map(|_| rng.normal()).collect()))
            .collect();
        let a = covariance(&samples).unwrap();
        samples.reverse();
        samples.swap(2, 9);
        let b = covariance(&samples).unwrap();
        let diff = a.sub(&b).unwrap().frobenius_norm();
        assert!(diff < 1e-12, "diff {diff}");
    }

    #[test]
    fn frobenius_zero_and_hand_case() {
        assert_eq!(Matrix::zeros(3, 4).frobenius_norm(), 0.0);
        let m = Matrix::from_rows(&[&[3.0, 4.0], &[0.0, 0.0]]).unwrap();
        assert_eq!(m.frobenius_norm(), 5.0);
    }

    #[test]
    fn frobenius_matches_elementwise_oracle() {
        let mut rng = RngStream::new(5);
        let m = random_matrix(&mut rng, 7, 4);
        let by_hand: f64 = m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((m.frobenius_norm() - by_hand).abs() < 1e-12);
    }

    #[test]
    fn matvec_transpose_agrees_with_transpose() {
        let mut rng = RngStream::new(6);
        let m = random_matrix(&mut rng, 5, 3);
        let x = Vector::from_vec((0..5).map(|_| rng.normal()).collect());
        let a = m.matvec_transpose(&x).unwrap();
        let b = m.transpose().matvec(&x).unwrap();
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn outer_product_shape_and_values() {
        let a = Vector::from_slice(&[1.0, 2.0]);
        let b = Vector::from_slice(&[3.0, 4.0, 5.0]);
        let m = outer(&a, &b);
        assert_eq!((m.rows(), m.cols()), (2, 3));
        assert_eq!(m.get(1, 2), 10.0);
    }
}
