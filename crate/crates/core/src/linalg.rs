//! Dense row-major matrices and a one-sided Jacobi SVD.
//!
//! Everything downstream (weights, gradients, adapters, bases) is a
//! `Matrix` of 64-bit floats. The SVD is one-sided Jacobi: it orthogonalizes
//! pairs of columns until convergence, which is slow in the large but
//! accurate to near machine precision at the dimensions used here, and it is
//! bit-deterministic. Left singular vectors are returned as a full `d1 x d1`
//! orthonormal basis (null directions completed by Gram-Schmidt), so a
//! projector built from all columns is the identity.

use crate::error::Error;
use crate::Result;

/// Dense row-major matrix of finite 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Build from row-major data. Rejects empty shapes, length mismatches
    /// and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("matrix must be non-empty, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("matrix contains non-finite entries".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix must be non-empty");
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Square matrix with `diag` on the diagonal.
    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Shape("no rows".into()));
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Matrix::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Standard product; inner dimensions must agree.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        // i-k-j order keeps the inner loop contiguous in both operands.
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if !self.same_shape(other) {
            return Err(Error::Shape(format!(
                "add {}x{} with {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if !self.same_shape(other) {
            return Err(Error::Shape(format!(
                "sub {}x{} with {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    /// In-place `self += s * other`.
    pub fn add_scaled(&mut self, other: &Matrix, s: f64) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Shape("add_scaled shape mismatch".into()));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// Columns `from..to` as a new matrix.
    pub fn columns(&self, from: usize, to: usize) -> Matrix {
        assert!(from < to && to <= self.cols);
        let mut out = Matrix::zeros(self.rows, to - from);
        for r in 0..self.rows {
            for c in from..to {
                out.data[r * (to - from) + (c - from)] = self.get(r, c);
            }
        }
        out
    }

    /// CSV text: one row per line, comma-separated decimal floats.
    /// The default float formatting round-trips exactly.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for r in 0..self.rows {
            let row: Vec<String> =
                (0..self.cols).map(|c| format!("{}", self.get(r, c))).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Matrix> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut row = Vec::new();
            for field in line.split(',') {
                let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                    line: i + 1,
                    message: format!("bad float {field:?}"),
                })?;
                row.push(v);
            }
            if let Some(first) = rows.first() {
                if row.len() != first.len() {
                    return Err(Error::Parse {
                        line: i + 1,
                        message: format!("expected {} fields, got {}", first.len(), row.len()),
                    });
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Parse { line: 0, message: "empty matrix csv".into() });
        }
        Matrix::from_rows(&rows)
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        crate::report::write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn read_csv(path: &std::path::Path) -> Result<Matrix> {
        let text = std::fs::read_to_string(path)?;
        Matrix::from_csv(&text)
    }
}

/// Frobenius inner product `sum_ij a_ij * b_ij`.
pub fn frobenius_inner(a: &Matrix, b: &Matrix) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "frobenius_inner {}x{} with {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum())
}

/// Result of `svd`: `m = u * diag(sigma) * vt` with `u` a full `d1 x d1`
/// orthonormal basis, `sigma` nonincreasing of length `min(d1, d2)`, and
/// `vt` a full `d2 x d2` orthonormal basis.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub vt: Matrix,
}

impl SvdResult {
    /// `u * diag(sigma) * vt`, for reconstruction checks.
    pub fn reconstruct(&self) -> Matrix {
        let d1 = self.u.rows();
        let d2 = self.vt.cols();
        let mut out = Matrix::zeros(d1, d2);
        for (j, &s) in self.sigma.iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            for r in 0..d1 {
                let us = self.u.get(r, j) * s;
                for c in 0..d2 {
                    out.data[r * d2 + c] += us * self.vt.get(j, c);
                }
            }
        }
        out
    }
}

// Convergence threshold for the off-diagonal cosine |b_p . b_q| / (|b_p||b_q|).
const JACOBI_TOL: f64 = 1e-14;
const JACOBI_MAX_SWEEPS: usize = 60;

/// Singular value decomposition with a fixed sign convention: the
/// largest-magnitude entry of each left singular vector is nonnegative
/// (first such entry on ties), so repeated runs and golden tests agree.
pub fn svd(m: &Matrix) -> Result<SvdResult> {
    if !m.is_finite() {
        return Err(Error::InvalidInput("svd input contains non-finite entries".into()));
    }
    let (mut u, sigma, mut vt) = if m.rows() >= m.cols() {
        let (q, sigma, v) = jacobi_tall(m);
        let u = complete_orthonormal(q, m.rows());
        (u, sigma, v.transpose())
    } else {
        // m = (m^T)^T: decompose the tall transpose and swap the roles.
        let mt = m.transpose();
        let (q, sigma, v) = jacobi_tall(&mt);
        let vt = complete_orthonormal(q, m.cols()).transpose();
        (v, sigma, vt)
    };
    apply_sign_convention(&mut u, &mut vt, sigma.len());
    Ok(SvdResult { u, sigma, vt })
}

/// One-sided Jacobi on a tall matrix (rows >= cols). Returns the
/// column-orthogonalized matrix with unit columns where the singular value
/// is nonzero (zero columns otherwise), the sorted singular values, and the
/// accumulated right factor `v` (cols x cols) with `m = q * diag(sigma) * v^T`.
fn jacobi_tall(m: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let rows = m.rows();
    let cols = m.cols();
    let mut b = m.clone();
    let mut v = Matrix::identity(cols);

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for r in 0..rows {
                    let bp = b.get(r, p);
                    let bq = b.get(r, q);
                    app += bp * bp;
                    aqq += bq * bq;
                    apq += bp * bq;
                }
                if app == 0.0 || aqq == 0.0 || apq.abs() <= JACOBI_TOL * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                // Rutishauser rotation annihilating the (p,q) inner product.
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut b, p, q, c, s);
                rotate_columns(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    // Column norms are the singular values; sort descending (stable).
    let mut order: Vec<usize> = (0..cols).collect();
    let norms: Vec<f64> = (0..cols)
        .map(|c| (0..rows).map(|r| b.get(r, c).powi(2)).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap().then(i.cmp(&j)));

    let mut q = Matrix::zeros(rows, cols);
    let mut vs = Matrix::zeros(cols, cols);
    let mut sigma = Vec::with_capacity(cols);
    for (dst, &src) in order.iter().enumerate() {
        let n = norms[src];
        sigma.push(n);
        if n > 0.0 {
            for r in 0..rows {
                q.set(r, dst, b.get(r, src) / n);
            }
        }
        for r in 0..cols {
            vs.set(r, dst, v.get(r, src));
        }
    }
    (q, sigma, vs)
}

fn rotate_columns(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let cols = m.cols();
    for r in 0..m.rows() {
        let mp = m.data[r * cols + p];
        let mq = m.data[r * cols + q];
        m.data[r * cols + p] = c * mp - s * mq;
        m.data[r * cols + q] = s * mp + c * mq;
    }
}

/// Extend `q` (rows x k, orthonormal nonzero columns, possibly with zero
/// columns for null singular values) to a full rows x rows orthonormal
/// basis. Zero columns are filled first, then extra columns appended, each
/// time picking the standard basis vector with the largest residual after
/// two rounds of Gram-Schmidt.
fn complete_orthonormal(q: Matrix, full: usize) -> Matrix {
    let rows = q.rows();
    debug_assert_eq!(rows, full);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(full);
    let mut missing_slots: Vec<usize> = Vec::new();
    for c in 0..q.cols() {
        let col = q.column(c);
        if col.iter().all(|&x| x == 0.0) {
            missing_slots.push(cols.len());
            cols.push(vec![0.0; rows]);
        } else {
            cols.push(col);
        }
    }
    let appended_from = cols.len();
    for _ in cols.len()..full {
        missing_slots.push(cols.len());
        cols.push(vec![0.0; rows]);
    }
    debug_assert!(appended_from <= full);

    for slot in missing_slots {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for cand in 0..rows {
            let mut e = vec![0.0; rows];
            e[cand] = 1.0;
            // two Gram-Schmidt passes for numerical insurance
            for _ in 0..2 {
                for col in cols.iter() {
                    if col.iter().all(|&x| x == 0.0) {
                        continue;
                    }
                    let dot: f64 = e.iter().zip(col).map(|(a, b)| a * b).sum();
                    for (ei, ci) in e.iter_mut().zip(col) {
                        *ei -= dot * ci;
                    }
                }
            }
            let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            if best.as_ref().map_or(true, |(bn, _)| norm > *bn) {
                best = Some((norm, e));
            }
        }
        let (norm, mut e) = best.expect("rows > 0");
        debug_assert!(norm > 1e-8, "basis completion found no independent direction");
        for x in e.iter_mut() {
            *x /= norm;
        }
        cols[slot] = e;
    }

    let mut out = Matrix::zeros(rows, full);
    for (c, col) in cols.iter().enumerate() {
        for (r, &x) in col.iter().enumerate() {
            out.set(r, c, x);
        }
    }
    out
}

/// Flip signs so the largest-magnitude entry of each `u` column is
/// nonnegative; paired rows of `vt` flip with it to keep the product.
fn apply_sign_convention(u: &mut Matrix, vt: &mut Matrix, pairs: usize) {
    for j in 0..u.cols() {
        let mut best_r = 0;
        let mut best_abs = -1.0f64;
        for r in 0..u.rows() {
            let a = u.get(r, j).abs();
            if a > best_abs {
                best_abs = a;
                best_r = r;
            }
        }
        if u.get(best_r, j) < 0.0 {
            for r in 0..u.rows() {
                let x = u.get(r, j);
                u.set(r, j, -x);
            }
            if j < pairs && j < vt.rows() {
                for c in 0..vt.cols() {
                    let x = vt.get(j, c);
                    vt.set(j, c, -x);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = rng::derive(seed, &[0xA11C]);
        Matrix::new(rows, cols, rng::normal_vec(&mut r, rows * cols)).unwrap()
    }

    #[test]
    fn svd_identity_has_unit_spectrum() {
        let s = svd(&Matrix::identity(3)).unwrap();
        assert_eq!(s.sigma, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn svd_diagonal_case() {
        let m = Matrix::from_diag(&[3.0, 2.0, 1.0]);
        let s = svd(&m).unwrap();
        assert_eq!(s.sigma, vec![3.0, 2.0, 1.0]);
        // already sorted, so u must be the identity under the sign convention
        for r in 0..3 {
            for c in 0..3 {
                let expect = if r == c { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(s.u.get(r, c), expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn svd_reconstruction_and_spectral_energy() {
        let m = random_matrix(8, 6, 42);
        let s = svd(&m).unwrap();
        let err = s.reconstruct().sub(&m).unwrap().frobenius_norm();
        assert!(err / m.frobenius_norm().max(1.0) <= 1e-8, "recon err {err}");
        // direct Frobenius computation as the independent oracle
        let fro = m.frobenius_norm();
        let sig_norm = s.sigma.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert_abs_diff_eq!(fro, sig_norm, epsilon = 1e-9);
    }

    #[test]
    fn svd_wide_and_rank_deficient() {
        let m = random_matrix(4, 9, 7);
        let s = svd(&m).unwrap();
        assert_eq!(s.u.rows(), 4);
        assert_eq!(s.u.cols(), 4);
        assert_eq!(s.vt.rows(), 9);
        assert_eq!(s.sigma.len(), 4);
        let err = s.reconstruct().sub(&m).unwrap().frobenius_norm();
        assert!(err <= 1e-10 * m.frobenius_norm().max(1.0));

        let ones = Matrix::new(3, 3, vec![1.0; 9]).unwrap();
        let s = svd(&ones).unwrap();
        assert_abs_diff_eq!(s.sigma[0], 3.0, epsilon = 1e-12);
        assert!(s.sigma[1].abs() <= 1e-12 && s.sigma[2].abs() <= 1e-12);
        // full U must still be orthonormal despite rank 1
        let gram = s.u.transpose().matmul(&s.u).unwrap();
        let err = gram.sub(&Matrix::identity(3)).unwrap().max_abs();
        assert!(err <= 1e-12, "gram err {err}");
    }

    #[test]
    fn svd_tall_full_basis() {
        let m = random_matrix(7, 3, 5);
        let s = svd(&m).unwrap();
        assert_eq!(s.u.cols(), 7);
        let gram = s.u.transpose().matmul(&s.u).unwrap();
        let err = gram.sub(&Matrix::identity(7)).unwrap().max_abs();
        assert!(err <= 1e-12);
    }

    #[test]
    fn svd_rejects_non_finite() {
        let m = Matrix { rows: 2, cols: 2, data: vec![1.0, f64::NAN, 0.0, 1.0] };
        assert!(matches!(svd(&m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn svd_golden_fixed_matrix() {
        // by-hand 2x2 case: M M^T of [[3,0],[4,5]] is [[9,12],[12,41]] with
        // trace 50 and determinant 225, so its eigenvalues are 45 and 5
        let m = Matrix::from_rows(&[vec![3.0, 0.0], vec![4.0, 5.0]]).unwrap();
        let s = svd(&m).unwrap();
        assert_abs_diff_eq!(s.sigma[0], 45.0f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(s.sigma[1], 5.0f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn frobenius_inner_cases() {
        let i2 = Matrix::identity(2);
        assert_eq!(frobenius_inner(&i2, &i2).unwrap(), 2.0);
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(frobenius_inner(&a, &i2).unwrap(), 5.0);
        let z = Matrix::zeros(2, 2);
        assert_eq!(frobenius_inner(&a, &z).unwrap(), 0.0);
        let bad = Matrix::zeros(2, 3);
        assert!(matches!(frobenius_inner(&a, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_cases() {
        let m = random_matrix(3, 3, 1);
        let i = Matrix::identity(3);
        assert_eq!(i.matmul(&m).unwrap(), m);
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let ones = Matrix::new(2, 1, vec![1.0, 1.0]).unwrap();
        let p = a.matmul(&ones).unwrap();
        assert_eq!(p.data(), &[3.0, 7.0]);
        let z = Matrix::zeros(3, 3);
        assert_eq!(z.matmul(&m).unwrap(), Matrix::zeros(3, 3));
        assert!(matches!(a.matmul(&m), Err(Error::Shape(_))));
    }

    #[test]
    fn csv_round_trip() {
        let m = random_matrix(4, 3, 9);
        let back = Matrix::from_csv(&m.to_csv()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let err = Matrix::from_csv("1,2\n3,oops\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let err = Matrix::from_csv("1,2\n3\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn matrix_new_validates() {
        assert!(Matrix::new(0, 2, vec![]).is_err());
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::new(1, 2, vec![1.0, f64::INFINITY]).is_err());
    }
}
