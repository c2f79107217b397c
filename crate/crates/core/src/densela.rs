//! Dense linear-algebra kernel: row-major `f64` matrices, sequential
//! Gram-Schmidt QR factorizations (MGS, CGS panel, blocked MGS), and
//! triangular solve.
//!
//! All operations are pure and deterministic: inner products accumulate
//! left-to-right, so two runs on identical inputs produce bitwise-identical
//! outputs. There is no pivoting anywhere; inputs that fail the full-rank
//! precondition are rejected with [`DenselaError::RankDeficient`].

use std::fmt;
use std::ops::{Index, IndexMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Relative threshold on diagonal entries for declaring rank deficiency.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum DenselaError {
    /// A Gram-Schmidt step met a column with vanishing residual norm.
    RankDeficient { column: usize, value: f64, tol: f64 },
    /// Block size does not divide the column count.
    BlockMismatch { cols: usize, block: usize },
    /// Back substitution met a diagonal entry below tolerance.
    SingularTriangular { row: usize },
    /// Construction from user data saw NaN or infinity.
    NonFinite,
    /// Operand shapes are incompatible.
    ShapeMismatch(String),
}

impl fmt::Display for DenselaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DenselaError::RankDeficient { column, value, tol } => write!(
                f,
                "rank deficient: |r_{column},{column}| = {value:e} below tolerance {tol:e}"
            ),
            DenselaError::BlockMismatch { cols, block } => {
                write!(f, "block size {block} does not divide column count {cols}")
            }
            DenselaError::SingularTriangular { row } => {
                write!(f, "singular triangular system: diagonal entry {row} too small")
            }
            DenselaError::NonFinite => write!(f, "matrix entries must be finite"),
            DenselaError::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
        }
    }
}

impl std::error::Error for DenselaError {}

pub type Result<T> = std::result::Result<T, DenselaError>;

/// Dense row-major matrix of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting NaN/Inf entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(DenselaError::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(DenselaError::NonFinite);
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(DenselaError::ShapeMismatch("ragged rows".into()));
        }
        Self::from_vec(r, c, rows.concat())
    }

    /// Matrix with entries drawn iid from Unif(0,1), reproducible from the
    /// seed. Entries are drawn in row-major order.
    pub fn random_uniform(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.gen::<f64>()).collect();
        DenseMatrix { rows, cols, data }
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

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `self * other`, accumulating over the inner index in ascending order.
    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimensions");
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        out
    }

    pub fn add(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        DenseMatrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        DenseMatrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        let data = self.data.iter().map(|a| a * s).collect();
        DenseMatrix { rows: self.rows, cols: self.cols, data }
    }

    /// In-place `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &DenseMatrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (d, o) in self.data.iter_mut().zip(&other.data) {
            *d += s * o;
        }
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> DenseMatrix {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols, "block out of range");
        let mut out = DenseMatrix::zeros(rows, cols);
        for i in 0..rows {
            let src = &self.data[(r0 + i) * self.cols + c0..(r0 + i) * self.cols + c0 + cols];
            out.data[i * cols..(i + 1) * cols].copy_from_slice(src);
        }
        out
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &DenseMatrix) {
        assert!(r0 + b.rows <= self.rows && c0 + b.cols <= self.cols, "block out of range");
        for i in 0..b.rows {
            let dst = (r0 + i) * self.cols + c0;
            self.data[dst..dst + b.cols].copy_from_slice(b.row(i));
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest singular value, estimated by power iteration on `AᵀA` from a
    /// fixed start vector. The returned value never exceeds the true norm.
    pub fn spectral_norm(&self) -> f64 {
        if self.data.iter().all(|&v| v == 0.0) {
            return 0.0;
        }
        let mut v = vec![1.0 / (self.cols as f64).sqrt(); self.cols];
        let mut sigma = 0.0f64;
        for _ in 0..300 {
            // w = A v, then v' = Aᵀ w
            let mut w = vec![0.0; self.rows];
            for i in 0..self.rows {
                let mut acc = 0.0;
                for (j, vj) in v.iter().enumerate() {
                    acc += self[(i, j)] * vj;
                }
                w[i] = acc;
            }
            let mut next = vec![0.0; self.cols];
            for (i, wi) in w.iter().enumerate() {
                if *wi == 0.0 {
                    continue;
                }
                for (j, n) in next.iter_mut().enumerate() {
                    *n += self[(i, j)] * wi;
                }
            }
            let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            let new_sigma = norm.sqrt();
            for n in next.iter_mut() {
                *n /= norm;
            }
            v = next;
            if (new_sigma - sigma).abs() <= 1e-12 * new_sigma {
                return new_sigma;
            }
            sigma = new_sigma;
        }
        sigma
    }

    fn col_norm(&self, j: usize) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.rows {
            let v = self[(i, j)];
            acc += v * v;
        }
        acc.sqrt()
    }

    fn col_dot(&self, a: usize, b: usize) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.rows {
            acc += self[(i, a)] * self[(i, b)];
        }
        acc
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// QR factorization by modified Gram-Schmidt.
///
/// Returns `(Q, R)` with `A = QR`, `QᵀQ ≈ I`, and the strict lower triangle
/// of `R` exactly zero. Diagonal entries of `R` are positive.
pub fn mgs_qr(a: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    let (m, k) = (a.rows(), a.cols());
    if m < k {
        return Err(DenselaError::ShapeMismatch(format!("mgs_qr needs rows >= cols, got {m}x{k}")));
    }
    let tol = RANK_TOL * a.frobenius_norm();
    let mut q = a.clone();
    let mut r = DenseMatrix::zeros(k, k);
    for i in 0..k {
        let rii = q.col_norm(i);
        if rii <= tol {
            return Err(DenselaError::RankDeficient { column: i, value: rii, tol });
        }
        r[(i, i)] = rii;
        for row in 0..m {
            q[(row, i)] /= rii;
        }
        for j in i + 1..k {
            let rij = q.col_dot(i, j);
            r[(i, j)] = rij;
            for row in 0..m {
                let qi = q[(row, i)];
                q[(row, j)] -= rij * qi;
            }
        }
    }
    Ok((q, r))
}

/// Panel QR by classical Gram-Schmidt in the row-update form: at step `i`
/// the inner products of column `i` with all trailing columns are formed
/// first, then the trailing columns are updated. This is the sequential
/// single-node form of the panel factorization used inside blocked MGS.
pub fn cgs_panel(a: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    let (m, k) = (a.rows(), a.cols());
    if m < k {
        return Err(DenselaError::ShapeMismatch(format!(
            "cgs_panel needs rows >= cols, got {m}x{k}"
        )));
    }
    let tol = RANK_TOL * a.frobenius_norm();
    let mut q = a.clone();
    let mut r = DenseMatrix::zeros(k, k);
    for i in 0..k {
        // v[j - i] = u_i . u_j for j = i..k, before normalization
        let mut v = vec![0.0; k - i];
        for (off, slot) in v.iter_mut().enumerate() {
            *slot = q.col_dot(i, i + off);
        }
        let rii = v[0].sqrt();
        if !rii.is_finite() || rii <= tol {
            return Err(DenselaError::RankDeficient { column: i, value: rii, tol });
        }
        r[(i, i)] = rii;
        for row in 0..m {
            q[(row, i)] /= rii;
        }
        for j in i + 1..k {
            let rij = v[j - i] / rii;
            r[(i, j)] = rij;
            for row in 0..m {
                let qi = q[(row, i)];
                q[(row, j)] -= rij * qi;
            }
        }
    }
    Ok((q, r))
}

/// Blocked MGS: panel factorization by [`cgs_panel`] followed by the
/// trailing update `Q[:, i+b:] -= Q̄ (Q̄ᵀ Q[:, i+b:])`, one panel of width
/// `block` at a time.
pub fn bmgs_qr(a: &DenseMatrix, block: usize) -> Result<(DenseMatrix, DenseMatrix)> {
    let (m, k) = (a.rows(), a.cols());
    if block == 0 || k % block != 0 {
        return Err(DenselaError::BlockMismatch { cols: k, block });
    }
    if m < k {
        return Err(DenselaError::ShapeMismatch(format!("bmgs_qr needs rows >= cols, got {m}x{k}")));
    }
    let mut q = a.clone();
    let mut r = DenseMatrix::zeros(k, k);
    let panels = k / block;
    for p in 0..panels {
        let c0 = p * block;
        let panel = q.block(0, c0, m, block);
        let (q_bar, r_diag) = cgs_panel(&panel)?;
        q.set_block(0, c0, &q_bar);
        r.set_block(c0, c0, &r_diag);
        let trailing = k - c0 - block;
        if trailing > 0 {
            let rest = q.block(0, c0 + block, m, trailing);
            let r_bar = q_bar.transpose().matmul(&rest);
            r.set_block(c0, c0 + block, &r_bar);
            let update = q_bar.matmul(&r_bar);
            let corrected = rest.sub(&update);
            q.set_block(0, c0 + block, &corrected);
        }
    }
    Ok((q, r))
}

/// Inverse by Gauss-Jordan elimination with partial pivoting. Returns
/// `None` when a pivot falls below `RANK_TOL` times the input scale.
pub(crate) fn gauss_jordan_inverse(m: &DenseMatrix) -> Option<DenseMatrix> {
    let n = m.rows();
    assert_eq!(n, m.cols(), "inverse needs a square matrix");
    let tol = RANK_TOL * m.max_abs().max(f64::MIN_POSITIVE);
    let width = 2 * n;
    let mut aug = DenseMatrix::zeros(n, width);
    for i in 0..n {
        for j in 0..n {
            aug[(i, j)] = m[(i, j)];
        }
        aug[(i, n + i)] = 1.0;
    }
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_val = aug[(col, col)].abs();
        for row in col + 1..n {
            let v = aug[(row, col)].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = row;
            }
        }
        if pivot_val <= tol {
            return None;
        }
        if pivot_row != col {
            for j in 0..width {
                let tmp = aug[(col, j)];
                aug[(col, j)] = aug[(pivot_row, j)];
                aug[(pivot_row, j)] = tmp;
            }
        }
        let pivot = aug[(col, col)];
        for j in 0..width {
            aug[(col, j)] /= pivot;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let factor = aug[(row, col)];
            if factor == 0.0 {
                continue;
            }
            for j in 0..width {
                let v = aug[(col, j)];
                aug[(row, j)] -= factor * v;
            }
        }
    }
    Some(aug.block(0, n, n, n))
}

/// Solves `R x = y` for upper-triangular `R` by back substitution.
pub fn back_substitute(r: &DenseMatrix, y: &DenseMatrix) -> Result<DenseMatrix> {
    let k = r.rows();
    if r.cols() != k || y.rows() != k || y.cols() != 1 {
        return Err(DenselaError::ShapeMismatch(format!(
            "back_substitute needs square R and k x 1 rhs, got {}x{} and {}x{}",
            r.rows(),
            r.cols(),
            y.rows(),
            y.cols()
        )));
    }
    let tol = RANK_TOL * r.frobenius_norm();
    let mut x = DenseMatrix::zeros(k, 1);
    for i in (0..k).rev() {
        let mut acc = y[(i, 0)];
        for j in i + 1..k {
            acc -= r[(i, j)] * x[(j, 0)];
        }
        let rii = r[(i, i)];
        if rii.abs() <= tol {
            return Err(DenselaError::SingularTriangular { row: i });
        }
        x[(i, 0)] = acc / rii;
    }
    Ok(x)
}
