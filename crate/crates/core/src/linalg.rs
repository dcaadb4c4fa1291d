//! Dense row-major matrices and the handful of kernels the rest of the crate
//! needs: LU solves, ridge least squares and power-iteration spectral norms.
//!
//! Everything is `f64`. Dimensions in this crate stay in the low hundreds, so
//! plain loops over contiguous rows are fast enough and easy to audit.

use crate::error::{check_len, Error, Result};
use crate::rng::SeededRng;

/// Dense matrix stored row-major.
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
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len("matrix data", data.len(), rows * cols)?;
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows. Panics on ragged input, which
    /// is only ever a programming error at the call site.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Matrix with i.i.d. `N(0, scale²)` entries.
    pub fn random_normal(rows: usize, cols: usize, scale: f64, rng: &mut SeededRng) -> Self {
        Self::from_fn(rows, cols, |_, _| scale * rng.normal())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
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

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, col: &[f64]) {
        for (i, &v) in col.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `A·v`
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        self.data
            .chunks_exact(self.cols.max(1))
            .take(self.rows)
            .map(|row| dot(row, v))
            .collect()
    }

    /// `Aᵀ·v`
    pub fn matvec_t(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            axpy(vi, self.row(i), &mut out);
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, other.row(k), out_row);
                }
            }
        }
        out
    }

    /// `Aᵀ·B` without materializing the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "t_matmul row dimension");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let b_row = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, b_row, out.row_mut(i));
                }
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn scale_mut(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape());
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape());
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// `self += s · u vᵀ`
    pub fn add_outer(&mut self, s: f64, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (i, &ui) in u.iter().enumerate() {
            if ui != 0.0 {
                axpy(s * ui, v, self.row_mut(i));
            }
        }
    }

    /// Copies `block` into `self` with its top-left corner at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Matrix) {
        for i in 0..block.rows {
            let dst = &mut self.data[(r0 + i) * self.cols + c0..(r0 + i) * self.cols + c0 + block.cols];
            dst.copy_from_slice(block.row(i));
        }
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn frobenius(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `y += a·x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scaled(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// LU factorization with partial pivoting, `P·A = L·U` packed in one matrix.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "LU needs a square matrix, got {}x{}",
                a.rows, a.cols
            )));
        }
        let n = a.rows;
        let threshold = 1e-14 * a.norm_inf();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pivot) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot < threshold || pivot == 0.0 {
                return Err(Error::SingularMatrix { pivot, threshold });
            }
            if p != k {
                perm.swap(p, k);
                for j in 0..n {
                    lu.data.swap(p * n + j, k * n + j);
                }
            }
            let diag = lu[(k, k)];
            for i in (k + 1)..n {
                let factor = lu[(i, k)] / diag;
                lu[(i, k)] = factor;
                if factor != 0.0 {
                    for j in (k + 1)..n {
                        lu.data[i * n + j] -= factor * lu.data[k * n + j];
                    }
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.lu.rows;
        check_len("right-hand side", b.len(), n)?;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s = dot(&self.lu.row(i)[..i], &x[..i]);
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s = dot(&self.lu.row(i)[i + 1..], &x[i + 1..]);
            x[i] = (x[i] - s) / self.lu[(i, i)];
        }
        Ok(x)
    }
}

/// Random orthogonal matrix from Gram-Schmidt on Gaussian columns.
pub fn random_orthogonal(n: usize, rng: &mut SeededRng) -> Matrix {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    while cols.len() < n {
        let mut v = rng.normal_vec(n);
        for q in &cols {
            let p = dot(q, &v);
            axpy(-p, q, &mut v);
        }
        let nv = norm2(&v);
        if nv > 1e-8 {
            cols.push(v.iter().map(|x| x / nv).collect());
        }
    }
    let mut m = Matrix::zeros(n, n);
    for (j, c) in cols.iter().enumerate() {
        m.set_column(j, c);
    }
    m
}

/// Solves `A·x = b` by LU with partial pivoting.
///
/// Fails with [`Error::SingularMatrix`] when a pivot falls below
/// `1e-14·‖A‖∞`.
pub fn solve_dense(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    check_len("right-hand side", b.len(), a.rows)?;
    if !a.is_finite() || !all_finite(b) {
        return Err(Error::NonFinite("solve_dense input".into()));
    }
    Lu::factor(a)?.solve(b)
}

/// `argmin_γ ‖Aγ − b‖² + λ‖γ‖²` through the regularized normal equations.
pub fn lstsq_ridge(a: &Matrix, b: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_len("right-hand side", b.len(), a.rows)?;
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "ridge coefficient must be nonnegative, got {lambda}"
        )));
    }
    if a.cols == 0 {
        return Ok(Vec::new());
    }
    let mut normal = a.t_matmul(a);
    for i in 0..a.cols {
        normal[(i, i)] += lambda;
    }
    solve_dense(&normal, &a.matvec_t(b))
}

/// Largest singular value by power iteration on `WᵀW`.
///
/// Stops once successive estimates agree to `tol` relative.
pub fn spectral_norm(w: &Matrix, max_iter: usize, tol: f64, rng: &mut SeededRng) -> Result<f64> {
    if !w.is_finite() {
        return Err(Error::NonFinite("spectral_norm input".into()));
    }
    if w.frobenius() == 0.0 {
        return Err(Error::ZeroWeight);
    }
    let mut v: Vec<f64> = (0..w.cols).map(|_| rng.normal()).collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut sigma_prev = f64::NAN;
    let mut last_change = f64::INFINITY;
    for _ in 0..max_iter {
        let wv = w.matvec(&v);
        let sigma = norm2(&wv);
        let mut next = w.matvec_t(&wv);
        let nn = norm2(&next);
        if nn == 0.0 {
            // v landed in the null space; the nonzero singular value is
            // still reported correctly by a fresh direction.
            next = (0..w.cols).map(|_| rng.normal()).collect();
            let n2 = norm2(&next);
            next.iter_mut().for_each(|x| *x /= n2);
            v = next;
            continue;
        }
        next.iter_mut().for_each(|x| *x /= nn);
        v = next;
        if sigma_prev.is_finite() {
            last_change = (sigma - sigma_prev).abs();
            if last_change <= tol * sigma {
                return Ok(sigma);
            }
        }
        sigma_prev = sigma;
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        last_change,
    })
}

/// Eigenvalues of a symmetric matrix in ascending order (cyclic Jacobi).
///
/// Only the symmetric part `(A + Aᵀ)/2` is used.
pub fn symmetric_eigenvalues(a: &Matrix) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!("eigenvalues need a square matrix, got {:?}", a.shape())));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("symmetric_eigenvalues input".into()));
    }
    let n = a.rows;
    let mut m = Matrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let scale = m.frobenius().max(f64::MIN_POSITIVE);
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            let mut eig: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
            eig.sort_by(f64::total_cmp);
            return Ok(eig);
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    Err(Error::NoConvergence {
        iterations: 100,
        last_change: f64::NAN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn solve_identity_and_diagonal() {
        let x = solve_dense(&Matrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
        let a = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 4.0]]);
        assert_eq!(solve_dense(&a, &[2.0, 8.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn solve_random_residual() {
        let mut rng = SeededRng::new(3);
        let mut a = Matrix::random_normal(8, 8, 1.0, &mut rng);
        for i in 0..8 {
            a[(i, i)] += 8.0;
        }
        let b: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
        let x = solve_dense(&a, &b).unwrap();
        let r = sub(&a.matvec(&x), &b);
        assert!(norm_inf(&r) <= 1e-10 * (1.0 + norm_inf(&b)));
    }

    #[test]
    fn singular_is_reported() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(matches!(
            solve_dense(&a, &[1.0, 1.0]),
            Err(Error::SingularMatrix { .. })
        ));
        assert!(matches!(
            solve_dense(&Matrix::zeros(2, 2), &[1.0, 1.0]),
            Err(Error::SingularMatrix { .. })
        ));
    }

    #[test]
    fn ridge_small_cases() {
        assert_eq!(
            lstsq_ridge(&Matrix::identity(2), &[3.0, 4.0], 0.0).unwrap(),
            vec![3.0, 4.0]
        );
        let g = lstsq_ridge(&Matrix::from_rows(&[vec![1.0]]), &[1.0], 1.0).unwrap();
        assert_abs_diff_eq!(g[0], 0.5, epsilon = 1e-15);
        assert!(lstsq_ridge(&Matrix::identity(2), &[1.0, 1.0], -1.0).is_err());
    }

    #[test]
    fn ridge_matches_normal_equations() {
        let mut rng = SeededRng::new(11);
        let a = Matrix::random_normal(10, 3, 1.0, &mut rng);
        let b: Vec<f64> = (0..10).map(|_| rng.normal()).collect();
        let lambda = 0.3;
        let got = lstsq_ridge(&a, &b, lambda).unwrap();
        let mut normal = a.transpose().matmul(&a);
        for i in 0..3 {
            normal[(i, i)] += lambda;
        }
        let want = solve_dense(&normal, &a.transpose().matvec(&b)).unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert_abs_diff_eq!(g, w, epsilon = 1e-12);
        }
    }

    #[test]
    fn spectral_norm_simple() {
        let mut rng = SeededRng::new(0);
        let w = Matrix::identity(4).scale(0.7);
        assert_abs_diff_eq!(spectral_norm(&w, 100, 1e-12, &mut rng).unwrap(), 0.7, epsilon = 1e-12);
        let w = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]);
        assert_abs_diff_eq!(spectral_norm(&w, 100, 1e-12, &mut rng).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(
            spectral_norm(&Matrix::zeros(2, 2), 10, 1e-12, &mut rng),
            Err(Error::ZeroWeight)
        );
    }

    #[test]
    fn spectral_norm_reports_no_convergence() {
        let mut rng = SeededRng::new(1);
        let w = Matrix::random_normal(6, 6, 1.0, &mut rng);
        assert!(matches!(
            spectral_norm(&w, 1, 1e-14, &mut rng),
            Err(Error::NoConvergence { .. })
        ));
    }

    #[test]
    fn matrix_products_agree() {
        let mut rng = SeededRng::new(5);
        let a = Matrix::random_normal(4, 3, 1.0, &mut rng);
        let b = Matrix::random_normal(4, 2, 1.0, &mut rng);
        let direct = a.transpose().matmul(&b);
        assert!(direct.max_abs_diff(&a.t_matmul(&b)) < 1e-14);
        let v = vec![1.0, -2.0, 0.5, 3.0];
        let lhs = a.matvec_t(&v);
        let rhs = a.transpose().matvec(&v);
        for (l, r) in lhs.iter().zip(&rhs) {
            assert_abs_diff_eq!(l, r, epsilon = 1e-14);
        }
    }

    #[test]
    fn symmetric_eigenvalues_match_nalgebra() {
        let mut rng = SeededRng::new(7);
        for n in [1, 2, 5, 12] {
            let a = Matrix::random_normal(n, n, 1.0, &mut rng);
            let ours = symmetric_eigenvalues(&a).unwrap();
            let sym = nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
            let mut oracle: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
            oracle.sort_by(f64::total_cmp);
            for (x, y) in ours.iter().zip(&oracle) {
                assert!((x - y).abs() < 1e-10, "{x} vs {y}");
            }
        }
        assert_eq!(symmetric_eigenvalues(&Matrix::from_diag(&[3.0, -1.0])).unwrap(), vec![-1.0, 3.0]);
        assert!(symmetric_eigenvalues(&Matrix::zeros(2, 3)).is_err());
    }
}
