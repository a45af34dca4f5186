//! Dense row-major matrices and the handful of factorizations the projectors need.
//!
//! Everything here is 64-bit and single-threaded. Sizes in this crate are small
//! (a few hundred rows at most), so the kernels are straightforward loops.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn scalar(value: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![value] }
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting bad lengths and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return shape_err(format!("data length {} does not match {rows}x{cols}", data.len()));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("matrix entry {pos}")));
        }
        Ok(Self { rows, cols, data })
    }

    /// Convenience constructor for literals. Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn column_vector(values: &[f64]) -> Self {
        Self { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    /// Entries drawn i.i.d. from `N(0, std²)`.
    pub fn random_normal(rows: usize, cols: usize, std: f64, rng: &mut impl rand::Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                std * z
            })
            .collect();
        Self { rows, cols, data }
    }

    /// Entries drawn i.i.d. from `U(−bound, bound)`.
    pub fn random_uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl rand::Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
        Self { rows, cols, data }
    }

    pub fn seeded_normal(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::random_normal(rows, cols, 1.0, &mut rng)
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// The single entry of a 1×1 matrix.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return shape_err(format!("matmul {}x{} by {}x{}", self.rows, self.cols, rhs.rows, rhs.cols));
        }
        Ok(self.matmul_unchecked(rhs))
    }

    pub(crate) fn matmul_unchecked(&self, rhs: &Self) -> Self {
        let (n, k, m) = (self.rows, self.cols, rhs.cols);
        let mut out = Self::zeros(n, m);
        for i in 0..n {
            let out_row = &mut out.data[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[p * m..(p + 1) * m];
                for (o, b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    fn zip_with(&self, rhs: &Self, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape() != rhs.shape() {
            return shape_err(format!("{op} {}x{} with {}x{}", self.rows, self.cols, rhs.rows, rhs.cols));
        }
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| f(*a, *b)).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| f(*v)).collect() }
    }

    pub fn add_assign(&mut self, rhs: &Self) {
        debug_assert_eq!(self.shape(), rhs.shape());
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }

    pub fn add_scaled_identity(&self, eps: f64) -> Result<Self> {
        if self.rows != self.cols {
            return shape_err(format!("expected square matrix, got {}x{}", self.rows, self.cols));
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            out.data[i * self.cols + i] += eps;
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest entrywise absolute difference. Shapes must agree.
    pub fn max_abs_diff(&self, rhs: &Self) -> f64 {
        assert_eq!(self.shape(), rhs.shape(), "max_abs_diff shape mismatch");
        self.data.iter().zip(&rhs.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Rows `start..start + len` as a new matrix.
    pub fn slice_rows(&self, start: usize, len: usize) -> Self {
        let data = self.data[start * self.cols..(start + len) * self.cols].to_vec();
        Self { rows: len, cols: self.cols, data }
    }

    pub fn vstack(parts: &[Self]) -> Result<Self> {
        let cols = parts.first().map_or(0, |p| p.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return shape_err(format!("vstack width {} vs {}", p.cols, cols));
            }
            rows += p.rows;
            data.extend_from_slice(&p.data);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn is_upper_triangular(&self, tol: f64) -> bool {
        (0..self.rows).all(|i| (0..i.min(self.cols)).all(|j| self.get(i, j).abs() <= tol))
    }
}

/// A batch of sequences of feature vectors, shaped `(b, t, d)` and stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    b: usize,
    t: usize,
    d: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(b: usize, t: usize, d: usize) -> Self {
        Self { b, t, d, data: vec![0.0; b * t * d] }
    }

    pub fn from_vec(b: usize, t: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != b * t * d {
            return shape_err(format!("data length {} does not match ({b},{t},{d})", data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor entry".into()));
        }
        Ok(Self { b, t, d, data })
    }

    pub fn seeded_normal(b: usize, t: usize, d: usize, seed: u64) -> Self {
        let m = Matrix::seeded_normal(b * t, d, seed);
        Self { b, t, d, data: m.into_data() }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.b, self.t, self.d)
    }

    pub fn batch(&self) -> usize {
        self.b
    }

    pub fn seq_len(&self) -> usize {
        self.t
    }

    pub fn features(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, b: usize, t: usize, d: usize) -> f64 {
        self.data[(b * self.t + t) * self.d + d]
    }

    /// View as a `(b·t) × d` matrix, one row per token.
    pub fn to_rows(&self) -> Matrix {
        Matrix { rows: self.b * self.t, cols: self.d, data: self.data.clone() }
    }

    pub fn from_rows(b: usize, t: usize, rows: Matrix) -> Result<Self> {
        if rows.rows != b * t {
            return shape_err(format!("{} rows cannot be split into {b}x{t}", rows.rows));
        }
        Ok(Self { b, t, d: rows.cols, data: rows.data })
    }

    /// The `t × d` slice of sample `b`.
    pub fn sample(&self, b: usize) -> Matrix {
        let n = self.t * self.d;
        Matrix { rows: self.t, cols: self.d, data: self.data[b * n..(b + 1) * n].to_vec() }
    }

    pub fn max_abs_diff(&self, rhs: &Self) -> f64 {
        assert_eq!(self.shape(), rhs.shape(), "max_abs_diff shape mismatch");
        self.data.iter().zip(&rhs.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Tolerance on `|r_ii|` below which a column is treated as dependent.
pub const RANK_TOL: f64 = 1e-12;

/// Thin QR factorization `w = q·r` by Householder reflections.
///
/// `q` is `m×n` with orthonormal columns and `r` is `n×n` upper triangular with a
/// non-negative diagonal (the sign convention that makes the factorization unique).
pub fn qr_thin(w: &Matrix) -> Result<(Matrix, Matrix)> {
    let (m, n) = w.shape();
    if n == 0 || m < n {
        return shape_err(format!("qr_thin needs rows >= cols >= 1, got {m}x{n}"));
    }
    let mut a = w.clone();
    // Householder vectors, one per column, each of length m - k.
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let norm = (k..m).map(|i| a.get(i, k).powi(2)).sum::<f64>().sqrt();
        let mut v: Vec<f64> = (k..m).map(|i| a.get(i, k)).collect();
        if norm == 0.0 {
            reflectors.push(Vec::new());
            continue;
        }
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for j in k..n {
                let dot: f64 = (k..m).map(|i| v[i - k] * a.get(i, j)).sum();
                let f = 2.0 * dot / vnorm2;
                for i in k..m {
                    let val = a.get(i, j) - f * v[i - k];
                    a.set(i, j, val);
                }
            }
        }
        reflectors.push(v);
    }

    let mut r = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            r.set(i, j, a.get(i, j));
        }
    }

    // q = H_0 H_1 ... H_{n-1} applied to the first n columns of the identity.
    let mut q = Matrix::zeros(m, n);
    for j in 0..n {
        q.set(j, j, 1.0);
    }
    for k in (0..n).rev() {
        let v = &reflectors[k];
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in 0..n {
            let dot: f64 = (k..m).map(|i| v[i - k] * q.get(i, j)).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k..m {
                let val = q.get(i, j) - f * v[i - k];
                q.set(i, j, val);
            }
        }
    }

    for i in 0..n {
        let rii = r.get(i, i);
        if rii.abs() < RANK_TOL {
            return Err(Error::RankDeficient { column: i, magnitude: rii.abs() });
        }
        if rii < 0.0 {
            for j in i..n {
                r.set(i, j, -r.get(i, j));
            }
            for row in 0..m {
                q.set(row, i, -q.get(row, i));
            }
        }
    }
    Ok((q, r))
}

/// Pivot threshold relative to the matrix scale.
const PIVOT_TOL: f64 = 1e-14;

/// Solves `(qstar_q + eps·I) u = z`.
///
/// Symmetric systems go through Cholesky; if that meets a pivot below
/// `1e-14·trace`, or the system is not symmetric (untied restriction and
/// prolongation), partial-pivot elimination is used instead.
pub fn solve_gram(qstar_q: &Matrix, eps: f64, z: &Matrix) -> Result<Matrix> {
    if eps < 0.0 || !eps.is_finite() {
        return Err(Error::Config(format!("regularization must be >= 0, got {eps}")));
    }
    let a = qstar_q.add_scaled_identity(eps)?;
    if z.rows() != a.rows() {
        return shape_err(format!("rhs has {} rows, system is {}x{}", z.rows(), a.rows(), a.cols()));
    }
    check_finite(&a, z)?;
    if is_symmetric(&a) {
        if let Some(u) = cholesky_solve(&a, z) {
            return Ok(u);
        }
    }
    solve_lu(&a, z)
}

fn check_finite(a: &Matrix, z: &Matrix) -> Result<()> {
    if a.data().iter().chain(z.data()).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("linear system entries".into()))
    }
}

fn is_symmetric(a: &Matrix) -> bool {
    let n = a.rows();
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    (0..n).all(|i| (0..i).all(|j| (a.get(i, j) - a.get(j, i)).abs() <= 1e-13 * scale))
}

fn cholesky_solve(a: &Matrix, z: &Matrix) -> Option<Matrix> {
    let n = a.rows();
    let floor = PIVOT_TOL * a.trace().abs();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k).powi(2);
        }
        if !(d > floor) {
            return None;
        }
        let ljj = d.sqrt();
        l.set(j, j, ljj);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / ljj);
        }
    }
    let mut u = z.clone();
    for c in 0..z.cols() {
        // forward: L y = z
        for i in 0..n {
            let mut s = u.get(i, c);
            for k in 0..i {
                s -= l.get(i, k) * u.get(k, c);
            }
            u.set(i, c, s / l.get(i, i));
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = u.get(i, c);
            for k in i + 1..n {
                s -= l.get(k, i) * u.get(k, c);
            }
            u.set(i, c, s / l.get(i, i));
        }
    }
    Some(u)
}

/// General square solve `a·u = z` by Gaussian elimination with partial pivoting.
pub fn solve_lu(a: &Matrix, z: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return shape_err(format!("expected square matrix, got {}x{}", n, a.cols()));
    }
    if z.rows() != n {
        return shape_err(format!("rhs has {} rows, system is {n}x{n}", z.rows()));
    }
    check_finite(a, z)?;
    let scale = a.max_abs();
    let mut m = a.clone();
    let mut u = z.clone();
    let k = z.cols();
    for col in 0..n {
        let (piv, pval) =
            (col..n)
                .map(|r| (r, m.get(r, col).abs()))
                .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if !(pval >= PIVOT_TOL * scale) || pval == 0.0 {
            return Err(Error::SingularSystem { row: col, pivot: pval });
        }
        if piv != col {
            for j in 0..n {
                let tmp = m.get(col, j);
                m.set(col, j, m.get(piv, j));
                m.set(piv, j, tmp);
            }
            for j in 0..k {
                let tmp = u.get(col, j);
                u.set(col, j, u.get(piv, j));
                u.set(piv, j, tmp);
            }
        }
        let p = m.get(col, col);
        for r in col + 1..n {
            let f = m.get(r, col) / p;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                let val = m.get(r, j) - f * m.get(col, j);
                m.set(r, j, val);
            }
            for j in 0..k {
                let val = u.get(r, j) - f * u.get(col, j);
                u.set(r, j, val);
            }
        }
    }
    for j in 0..k {
        for i in (0..n).rev() {
            let mut s = u.get(i, j);
            for c in i + 1..n {
                s -= m.get(i, c) * u.get(c, j);
            }
            u.set(i, j, s / m.get(i, i));
        }
    }
    Ok(u)
}

/// Estimates the largest singular value of `m` by power iteration on `mᵀm`.
///
/// The returned value is `‖m v‖` for a unit vector `v`, so it never exceeds the
/// true norm.
pub fn spectral_norm(m: &Matrix, iters: usize, seed: u64) -> f64 {
    let n = m.cols();
    if n == 0 || m.max_abs() == 0.0 {
        return 0.0;
    }
    let mut v = Matrix::seeded_normal(n, 1, seed);
    let mt = m.transpose();
    let mut best = 0.0f64;
    for _ in 0..iters.max(1) {
        let norm = v.frobenius_norm();
        if norm == 0.0 {
            break;
        }
        v = v.scale(1.0 / norm);
        let mv = m.matmul_unchecked(&v);
        best = best.max(mv.frobenius_norm());
        v = mt.matmul_unchecked(&mv);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn modified_gram_schmidt(w: &Matrix) -> (Matrix, Matrix) {
        let (m, n) = w.shape();
        let mut q = w.clone();
        let mut r = Matrix::zeros(n, n);
        for j in 0..n {
            for i in 0..j {
                let dot: f64 = (0..m).map(|k| q.get(k, i) * q.get(k, j)).sum();
                r.set(i, j, dot);
                for k in 0..m {
                    let v = q.get(k, j) - dot * q.get(k, i);
                    q.set(k, j, v);
                }
            }
            let norm = (0..m).map(|k| q.get(k, j).powi(2)).sum::<f64>().sqrt();
            r.set(j, j, norm);
            for k in 0..m {
                let v = q.get(k, j) / norm;
                q.set(k, j, v);
            }
        }
        (q, r)
    }

    fn naive_elimination(a: &Matrix, z: &Matrix) -> Matrix {
        // Gauss-Jordan on the augmented matrix, no pivoting beyond row swaps on zero.
        let n = a.rows();
        let k = z.cols();
        let mut aug = Matrix::zeros(n, n + k);
        for i in 0..n {
            for j in 0..n {
                aug.set(i, j, a.get(i, j));
            }
            for j in 0..k {
                aug.set(i, n + j, z.get(i, j));
            }
        }
        for c in 0..n {
            let p = aug.get(c, c);
            for j in 0..n + k {
                let v = aug.get(c, j) / p;
                aug.set(c, j, v);
            }
            for r in 0..n {
                if r != c {
                    let f = aug.get(r, c);
                    for j in 0..n + k {
                        let v = aug.get(r, j) - f * aug.get(c, j);
                        aug.set(r, j, v);
                    }
                }
            }
        }
        let mut u = Matrix::zeros(n, k);
        for i in 0..n {
            for j in 0..k {
                u.set(i, j, aug.get(i, n + j));
            }
        }
        u
    }

    fn jacobi_eigenvalues(a: &Matrix) -> Vec<f64> {
        let n = a.rows();
        let mut m = a.clone();
        for _ in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j)))
                .map(|(i, j)| m.get(i, j).powi(2))
                .sum();
            if off < 1e-26 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = m.get(p, q);
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    let mut rot = Matrix::identity(n);
                    rot.set(p, p, c);
                    rot.set(q, q, c);
                    rot.set(p, q, s);
                    rot.set(q, p, -s);
                    m = rot.transpose().matmul(&m).unwrap().matmul(&rot).unwrap();
                }
            }
        }
        (0..n).map(|i| m.get(i, i)).collect()
    }

    fn random_spd(n: usize, seed: u64) -> Matrix {
        let g = Matrix::seeded_normal(n, n, seed);
        g.transpose().matmul(&g).unwrap().add_scaled_identity(0.5).unwrap()
    }

    #[test]
    fn qr_identity() {
        let (q, r) = qr_thin(&Matrix::identity(3)).unwrap();
        assert!(q.max_abs_diff(&Matrix::identity(3)) < 1e-15);
        assert!(r.max_abs_diff(&Matrix::identity(3)) < 1e-15);
    }

    #[test]
    fn qr_single_column() {
        let w = Matrix::from_rows(&[&[2.0], &[0.0]]);
        let (q, r) = qr_thin(&w).unwrap();
        assert_eq!(q, Matrix::from_rows(&[&[1.0], &[0.0]]));
        assert_eq!(r, Matrix::scalar(2.0));
    }

    #[test]
    fn qr_matches_gram_schmidt() {
        let w = Matrix::seeded_normal(16, 4, 11);
        let (q, r) = qr_thin(&w).unwrap();
        let (q_gs, r_gs) = modified_gram_schmidt(&w);
        let qtq = q.transpose().matmul(&q).unwrap();
        assert!(qtq.sub(&Matrix::identity(4)).unwrap().frobenius_norm() < 1e-10);
        assert!(q.matmul(&r).unwrap().sub(&w).unwrap().frobenius_norm() < 1e-10);
        assert!(r.is_upper_triangular(0.0));
        assert!(q.max_abs_diff(&q_gs) < 1e-10);
        assert!(r.max_abs_diff(&r_gs) < 1e-10);
    }

    #[test]
    fn qr_rank_deficient_names_column() {
        let w = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0], &[3.0, 6.0]]);
        match qr_thin(&w) {
            Err(Error::RankDeficient { column, .. }) => assert_eq!(column, 1),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn qr_rejects_wide_input() {
        assert!(matches!(qr_thin(&Matrix::zeros(2, 3)), Err(Error::Shape(_))));
    }

    #[test]
    fn solve_gram_identity_and_scalar() {
        let u = solve_gram(&Matrix::identity(2), 0.0, &Matrix::column_vector(&[3.0, 5.0])).unwrap();
        assert_eq!(u, Matrix::column_vector(&[3.0, 5.0]));
        let u = solve_gram(&Matrix::scalar(2.0), 1.0, &Matrix::scalar(6.0)).unwrap();
        assert!((u.item() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn solve_gram_random_spd_against_elimination() {
        let a = random_spd(8, 3);
        let z = Matrix::seeded_normal(8, 3, 4);
        let u = solve_gram(&a, 1e-4, &z).unwrap();
        let reg = a.add_scaled_identity(1e-4).unwrap();
        for c in 0..3 {
            let zc = Matrix::column_vector(&z.column(c));
            let uc = Matrix::column_vector(&u.column(c));
            let res = reg.matmul(&uc).unwrap().sub(&zc).unwrap().frobenius_norm();
            assert!(res / zc.frobenius_norm() < 1e-9);
        }
        let oracle = naive_elimination(&reg, &z);
        assert!(u.max_abs_diff(&oracle) < 1e-9 * oracle.max_abs().max(1.0));
        let u0 = solve_gram(&a, 0.0, &z).unwrap();
        let oracle0 = naive_elimination(&a, &z);
        assert!(u0.max_abs_diff(&oracle0) < 1e-9 * oracle0.max_abs().max(1.0));
    }

    #[test]
    fn solve_gram_nonsymmetric_uses_elimination() {
        let a = Matrix::seeded_normal(5, 5, 8).add_scaled_identity(4.0).unwrap();
        let z = Matrix::seeded_normal(5, 2, 9);
        let u = solve_gram(&a, 0.0, &z).unwrap();
        assert!(a.matmul(&u).unwrap().max_abs_diff(&z) < 1e-12);
    }

    #[test]
    fn solve_gram_singular() {
        let a = Matrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let err = solve_gram(&a, 0.0, &Matrix::column_vector(&[1.0, 2.0])).unwrap_err();
        assert!(matches!(err, Error::SingularSystem { .. }));
        assert!(solve_gram(&a, 1e-3, &Matrix::column_vector(&[1.0, 2.0])).is_ok());
    }

    #[test]
    fn overflowed_systems_are_non_finite() {
        let mut a = Matrix::identity(2);
        a.set(0, 1, f64::INFINITY);
        let z = Matrix::column_vector(&[1.0, 2.0]);
        assert!(matches!(solve_gram(&a, 0.0, &z), Err(Error::NonFinite(_))));
        assert!(matches!(solve_lu(&a, &z), Err(Error::NonFinite(_))));
    }

    #[test]
    fn spectral_norm_simple_cases() {
        assert!((spectral_norm(&Matrix::diag(&[3.0, 1.0]), 200, 1) - 3.0).abs() < 1e-6);
        assert_eq!(spectral_norm(&Matrix::zeros(4, 4), 10, 1), 0.0);
    }

    #[test]
    fn spectral_norm_matches_jacobi() {
        let g = Matrix::seeded_normal(10, 10, 21);
        let sym = g.add(&g.transpose()).unwrap().scale(0.5);
        let eig = jacobi_eigenvalues(&sym);
        let sigma = eig.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        let est = spectral_norm(&sym, 2000, 5);
        assert!(est <= sigma * (1.0 + 1e-12));
        assert!((est - sigma).abs() / sigma < 1e-4, "{est} vs {sigma}");
    }

    #[test]
    fn from_vec_rejects_nan() {
        assert!(matches!(Matrix::from_vec(1, 1, vec![f64::NAN]), Err(Error::NonFinite(_))));
        assert!(matches!(Matrix::from_vec(2, 1, vec![1.0]), Err(Error::Shape(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]
            #[test]
            fn qr_orthonormal_and_reconstructs(cols in 1usize..16, extra in 0usize..48, seed in any::<u64>()) {
                let rows = cols + extra;
                let w = Matrix::seeded_normal(rows, cols, seed);
                let (q, r) = qr_thin(&w).unwrap();
                let qtq = q.transpose().matmul(&q).unwrap();
                prop_assert!(qtq.sub(&Matrix::identity(cols)).unwrap().frobenius_norm() < 1e-10);
                let rec = q.matmul(&r).unwrap().sub(&w).unwrap().frobenius_norm();
                prop_assert!(rec < 1e-10 * w.frobenius_norm());
            }

            #[test]
            fn gram_solve_residual(n in 1usize..12, seed in any::<u64>(), eps in 0.0f64..1e-2) {
                let a = random_spd(n, seed);
                let z = Matrix::seeded_normal(n, 2, seed ^ 0x55);
                let u = solve_gram(&a, eps, &z).unwrap();
                let reg = a.add_scaled_identity(eps).unwrap();
                let res = reg.matmul(&u).unwrap().sub(&z).unwrap().frobenius_norm();
                prop_assert!(res / z.frobenius_norm() < 1e-9);
            }
        }
    }
}
