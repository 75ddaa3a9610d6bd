//! Dense row-major `f64` matrices and the decompositions the rest of the
//! crate is built on: a cyclic Jacobi symmetric eigensolver and a one-sided
//! Jacobi thin SVD.

use std::fmt;

use crate::error::{Error, Result};

/// Off-diagonal convergence threshold relative to ‖M‖_F.
pub const EIG_TOLERANCE: f64 = 1e-12;
/// Sweep budget for both Jacobi solvers.
pub const MAX_SWEEPS: usize = 100;

/// Dense real matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    /// Builds a matrix from row-major entries. Rejects empty shapes,
    /// length mismatches and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidMatrix(format!(
                "shape {rows}x{cols} has a zero dimension"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidMatrix(format!(
                "{} entries for shape {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix(format!(
                "non-finite entry at ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(n * m);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != m {
                return Err(Error::InvalidMatrix(format!(
                    "row {i} has {} entries, expected {m}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(n, m, data)
    }

    /// Single-column matrix.
    pub fn column_vector(v: &[f64]) -> Result<Self> {
        Self::new(v.len(), 1, v.to_vec())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "zero-sized matrix");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(d: &[f64]) -> Result<Self> {
        let n = d.len();
        Self::from_fn(n, n, |i, j| if i == j { d[i] } else { 0.0 })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub(crate) fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// Columns `0..count` as a new matrix.
    pub fn leading_columns(&self, count: usize) -> Result<Self> {
        if count == 0 || count > self.cols {
            return Err(Error::RankOutOfRange {
                op: "leading_columns",
                rank: count,
                max: self.cols,
            });
        }
        Self::from_fn(self.rows, count, |i, j| self.get(i, j))
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.get(i, j));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Self> {
        mat_mul(self, other)
    }

    /// `self · x` for a plain vector.
    pub fn mat_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::ShapeMismatch {
                op: "mat_vec",
                left: self.shape(),
                right: (x.len(), 1),
            });
        }
        let out: Vec<f64> = (0..self.rows).map(|i| dot(self.row(i), x)).collect();
        ensure_finite("mat_vec", &out)?;
        Ok(out)
    }

    /// `selfᵀ · x` without materializing the transpose.
    pub fn transpose_mat_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::ShapeMismatch {
                op: "transpose_mat_vec",
                left: (self.cols, self.rows),
                right: (x.len(), 1),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        ensure_finite("transpose_mat_vec", &out)?;
        Ok(out)
    }

    pub fn add(&self, other: &Matrix) -> Result<Self> {
        self.zip_with("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Self> {
        self.zip_with("sub", other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Result<Self> {
        let data: Vec<f64> = self.data.iter().map(|v| v * s).collect();
        ensure_finite("scale", &data)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    fn zip_with(&self, op: &'static str, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        ensure_finite(op, &data)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    /// Largest entrywise absolute difference; panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub(crate) fn ensure_finite(op: &'static str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

/// Matrix product `a · b`.
pub fn mat_mul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch {
            op: "mat_mul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let (n, m) = (a.rows, b.cols);
    let mut data = vec![0.0; n * m];
    for i in 0..n {
        let out = &mut data[i * m..(i + 1) * m];
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            for (o, &bkj) in out.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    ensure_finite("mat_mul", &data)?;
    Ok(Matrix {
        rows: n,
        cols: m,
        data,
    })
}

pub fn frobenius_norm(m: &Matrix) -> f64 {
    // scaled accumulation so huge entries don't overflow the sum of squares
    let scale = m.data.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let s: f64 = m.data.iter().map(|v| (v / scale) * (v / scale)).sum();
    scale * s.sqrt()
}

/// Square matrix that is exactly symmetric entry by entry.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricMatrix(Matrix);

impl SymmetricMatrix {
    pub fn dim(&self) -> usize {
        self.0.rows
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn from_diag(d: &[f64]) -> Result<Self> {
        Ok(Self(Matrix::from_diag(d)?))
    }

    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n))
    }

    /// Zero matrix of the given dimension.
    pub fn zeros(n: usize) -> Self {
        Self(Matrix::zeros(n, n))
    }

    /// Accepts `m` only when it is already exactly symmetric.
    pub fn try_from_exact(m: Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::NotSquare {
                op: "SymmetricMatrix",
                rows: m.rows,
                cols: m.cols,
            });
        }
        for i in 0..m.rows {
            for j in (i + 1)..m.cols {
                if m.get(i, j) != m.get(j, i) {
                    return Err(Error::InvalidMatrix(format!(
                        "entry ({i}, {j}) differs from its transpose"
                    )));
                }
            }
        }
        Ok(Self(m))
    }

    /// `a·self + b·other`, re-symmetrized.
    pub fn linear_combination(&self, a: f64, other: &SymmetricMatrix, b: f64) -> Result<Self> {
        let combined = self.0.zip_with("linear_combination", &other.0, |x, y| a * x + b * y)?;
        symmetrize(&combined)
    }
}

impl AsRef<Matrix> for SymmetricMatrix {
    fn as_ref(&self) -> &Matrix {
        &self.0
    }
}

/// `(m + mᵀ) / 2`, with the upper triangle mirrored so the result is
/// bitwise symmetric.
pub fn symmetrize(m: &Matrix) -> Result<SymmetricMatrix> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            op: "symmetrize",
            rows: m.rows,
            cols: m.cols,
        });
    }
    let n = m.rows;
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        out.set(i, i, m.get(i, i));
        for j in (i + 1)..n {
            let v = 0.5 * m.get(i, j) + 0.5 * m.get(j, i);
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    ensure_finite("symmetrize", out.as_slice())?;
    Ok(SymmetricMatrix(out))
}

/// Eigenvalues sorted descending with unit eigenvectors in matching columns.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl EigenDecomposition {
    /// First `r` eigenvectors as a `dim × r` matrix.
    pub fn leading_vectors(&self, r: usize) -> Result<Matrix> {
        self.eigenvectors.leading_columns(r)
    }

    /// `Q Λ Qᵀ`.
    pub fn reconstruct(&self) -> Result<Matrix> {
        let q = &self.eigenvectors;
        let ql = Matrix::from_fn(q.rows, q.cols, |i, j| q.get(i, j) * self.eigenvalues[j])?;
        mat_mul(&ql, &q.transpose())
    }
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows;
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a.get(i, j) * a.get(i, j);
            }
        }
    }
    s.sqrt()
}

/// Flip each column so its largest-magnitude entry is positive (lowest index
/// wins ties). Returns the per-column signs applied.
fn canonicalize_signs(m: &mut Matrix) -> Vec<f64> {
    let mut signs = Vec::with_capacity(m.cols);
    for j in 0..m.cols {
        let mut best = 0;
        let mut best_abs = -1.0;
        for i in 0..m.rows {
            let v = m.get(i, j).abs();
            if v > best_abs {
                best_abs = v;
                best = i;
            }
        }
        let sign = if m.get(best, j) < 0.0 { -1.0 } else { 1.0 };
        if sign < 0.0 {
            for i in 0..m.rows {
                let v = m.get(i, j);
                m.set(i, j, -v);
            }
        }
        signs.push(sign);
    }
    signs
}

/// Permute columns of `m` by `order` (new column k = old column order[k]).
fn permute_columns(m: &Matrix, order: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(m.rows, order.len());
    for (k, &src) in order.iter().enumerate() {
        for i in 0..m.rows {
            out.set(i, k, m.get(i, src));
        }
    }
    out
}

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Converged once the off-diagonal Frobenius norm drops to
/// `EIG_TOLERANCE · ‖M‖_F`. Eigenvalues come back in descending order
/// (stable with respect to the solver's column order) and each eigenvector
/// has its largest-magnitude component positive.
pub fn eig_sym(m: &SymmetricMatrix) -> Result<EigenDecomposition> {
    let n = m.dim();
    let mut a = m.0.clone();
    let mut v = Matrix::identity(n);
    let threshold = EIG_TOLERANCE * frobenius_norm(&a);

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) <= threshold {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                jacobi_rotate(&mut a, &mut v, p, q);
            }
        }
    }
    if !converged {
        let off = off_diagonal_norm(&a);
        if off > threshold {
            return Err(Error::NoConvergence {
                sweeps: MAX_SWEEPS,
                off_norm: off,
            });
        }
    }

    let diag: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal eigenvalues keep solver column order
    order.sort_by(|&i, &j| diag[j].total_cmp(&diag[i]));
    let eigenvalues = order.iter().map(|&i| diag[i]).collect();
    let mut eigenvectors = permute_columns(&v, &order);
    canonicalize_signs(&mut eigenvectors);
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// One symmetric Jacobi rotation zeroing `a[p][q]`, accumulated into `v`.
fn jacobi_rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let apq = a.get(p, q);
    if apq == 0.0 {
        return;
    }
    let n = a.rows;
    let app = a.get(p, p);
    let aqq = a.get(q, q);
    let theta = (aqq - app) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        let t = 1.0 / (theta.abs() + (theta * theta + 1.0).sqrt());
        if theta < 0.0 {
            -t
        } else {
            t
        }
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = a.get(k, p);
        let akq = a.get(k, q);
        let new_kp = c * akp - s * akq;
        let new_kq = s * akp + c * akq;
        a.set(k, p, new_kp);
        a.set(p, k, new_kp);
        a.set(k, q, new_kq);
        a.set(q, k, new_kq);
    }
    a.set(p, p, app - t * apq);
    a.set(q, q, aqq + t * apq);
    a.set(p, q, 0.0);
    a.set(q, p, 0.0);

    for k in 0..n {
        let vkp = v.get(k, p);
        let vkq = v.get(k, q);
        v.set(k, p, c * vkp - s * vkq);
        v.set(k, q, s * vkp + c * vkq);
    }
}

/// Truncated singular value decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct ThinSvd {
    /// `rows × r`, orthonormal columns.
    pub u: Matrix,
    /// Non-increasing, non-negative.
    pub sigma: Vec<f64>,
    /// `cols × r`, orthonormal columns.
    pub v: Matrix,
}

impl ThinSvd {
    /// `U diag(σ) Vᵀ`.
    pub fn reconstruct(&self) -> Result<Matrix> {
        let us = Matrix::from_fn(self.u.rows, self.u.cols, |i, j| self.u.get(i, j) * self.sigma[j])?;
        mat_mul(&us, &self.v.transpose())
    }
}

/// Top-`r` singular triplets of `m` via one-sided (Hestenes) Jacobi.
///
/// Columns of `U` are sign-normalized so their largest-magnitude entry is
/// positive; the matching `V` columns are flipped with them.
pub fn svd_thin(m: &Matrix, r: usize) -> Result<ThinSvd> {
    let max = m.rows.min(m.cols);
    if r == 0 || r > max {
        return Err(Error::RankOutOfRange {
            op: "svd_thin",
            rank: r,
            max,
        });
    }
    let (u_full, sigma_full, v_full) = if m.rows >= m.cols {
        one_sided_jacobi(m)?
    } else {
        let (u, s, v) = one_sided_jacobi(&m.transpose())?;
        (v, s, u)
    };
    let mut u = u_full.leading_columns(r)?;
    let mut v = v_full.leading_columns(r)?;
    let signs = canonicalize_signs(&mut u);
    for (j, s) in signs.iter().enumerate() {
        if *s < 0.0 {
            for i in 0..v.rows {
                let x = v.get(i, j);
                v.set(i, j, -x);
            }
        }
    }
    Ok(ThinSvd {
        u,
        sigma: sigma_full[..r].to_vec(),
        v,
    })
}

/// Full SVD of a tall (`rows ≥ cols`) matrix: returns `U` (rows × cols),
/// σ (descending) and `V` (cols × cols).
fn one_sided_jacobi(m: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let (rows, n) = m.shape();
    // work column-major: w[j] is column j
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| m.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    const ORTHO_TOL: f64 = 1e-15;

    let mut converged = false;
    let mut worst = 0.0;
    for _ in 0..MAX_SWEEPS {
        worst = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == 0.0 {
                    continue;
                }
                let rel = gamma.abs() / (alpha * beta).sqrt();
                worst = worst.max(rel);
                if rel <= ORTHO_TOL {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta.abs() > 1e150 {
                    0.5 / zeta
                } else {
                    let t = 1.0 / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    if zeta < 0.0 {
                        -t
                    } else {
                        t
                    }
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut w, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
            }
        }
        if worst <= ORTHO_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            sweeps: MAX_SWEEPS,
            off_norm: worst,
        });
    }

    let norms: Vec<f64> = w.iter().map(|c| norm(c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let sigma: Vec<f64> = order.iter().map(|&i| norms[i]).collect();
    let smax = sigma[0];

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (k, &src) in order.iter().enumerate() {
        let s = sigma[k];
        if s > 0.0 && s > smax * 1e-13 {
            u_cols.push(w[src].iter().map(|x| x / s).collect());
        } else {
            // null direction: complete the basis
            let col = complete_basis_vector(&u_cols, rows).ok_or(Error::RankDeficient { column: k })?;
            u_cols.push(col);
        }
    }
    let u = Matrix::from_fn(rows, n, |i, j| u_cols[j][i])?;
    let vm = Matrix::from_fn(n, n, |i, j| v[order[j]][i])?;
    Ok((u, sigma, vm))
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let cp = &mut left[p];
    let cq = &mut right[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let a = *x;
        let b = *y;
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Unit vector orthogonal to every vector in `basis`, taken from the
/// standard basis vector with the largest residual.
fn complete_basis_vector(basis: &[Vec<f64>], dim: usize) -> Option<Vec<f64>> {
    let mut best: Option<Vec<f64>> = None;
    let mut best_norm = 0.0;
    for e in 0..dim {
        let mut x = vec![0.0; dim];
        x[e] = 1.0;
        for _ in 0..2 {
            for b in basis {
                let d = dot(b, &x);
                for (xi, bi) in x.iter_mut().zip(b) {
                    *xi -= d * bi;
                }
            }
        }
        let nx = norm(&x);
        if nx > best_norm {
            best_norm = nx;
            best = Some(x);
        }
    }
    let x = best?;
    if best_norm < 1e-8 {
        return None;
    }
    Some(x.into_iter().map(|v| v / best_norm).collect())
}

/// Orthonormalizes the columns of `m` by modified Gram–Schmidt with one
/// re-orthogonalization pass. Fails when a column is (numerically) in the
/// span of the previous ones.
pub fn orthonormalize_columns(m: &Matrix) -> Result<Matrix> {
    let (rows, cols) = m.shape();
    if cols > rows {
        return Err(Error::RankDeficient { column: rows });
    }
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(cols);
    for j in 0..cols {
        let mut x = m.column(j);
        let original = norm(&x);
        for _ in 0..2 {
            for b in &q {
                let d = dot(b, &x);
                for (xi, bi) in x.iter_mut().zip(b) {
                    *xi -= d * bi;
                }
            }
        }
        let nx = norm(&x);
        if nx == 0.0 || nx <= 1e-10 * original {
            return Err(Error::RankDeficient { column: j });
        }
        q.push(x.into_iter().map(|v| v / nx).collect());
    }
    Matrix::from_fn(rows, cols, |i, j| q[j][i])
}

/// Largest entrywise deviation of `QᵀQ` from the identity.
pub fn orthonormality_error(q: &Matrix) -> f64 {
    let cols: Vec<Vec<f64>> = (0..q.cols).map(|j| q.column(j)).collect();
    let mut worst = 0.0f64;
    for i in 0..cols.len() {
        for j in i..cols.len() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot(&cols[i], &cols[j]) - target).abs());
        }
    }
    worst
}
