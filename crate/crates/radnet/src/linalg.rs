//! Dense real matrices and the complete Householder QR decomposition.
//!
//! Everything is `f64`, stored row-major. The kernel is deliberately small:
//! products, transposes, block helpers, and [`qr_complete`], which returns a
//! square orthogonal `Q` together with an upper-triangular `R` such that
//! `A = Q · Inc · R`.
//!
//! ```
//! use radnet::linalg::{qr_complete, Matrix};
//!
//! let a = Matrix::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
//! let qr = qr_complete(&a).unwrap();
//! assert_eq!(qr.q.rows(), 2);
//! assert!((qr.r[(0, 0)].abs() - 5.0).abs() < 1e-12);
//! assert!(qr.reconstruct().max_abs_diff(&a) < 1e-12);
//! ```

use std::fmt;
use std::ops::{Index, IndexMut};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerical tolerances shared across the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Max-norm bound on `QᵀQ − I` for a matrix to count as orthogonal.
    pub orthogonality: f64,
    /// Max-norm bound for factorization reconstruction.
    pub reconstruction: f64,
    /// Entries of structurally-zero blocks may deviate by at most this much.
    pub zero_block: f64,
    /// Vectors shorter than this are treated as the origin by activations.
    pub near_origin: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        TOL
    }
}

/// Default tolerances.
pub const TOL: Tolerances = Tolerances {
    orthogonality: 1e-10,
    reconstruction: 1e-10,
    zero_block: 1e-10,
    near_origin: 1e-12,
};

/// A dense row-major matrix of `f64`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
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

    /// Builds a matrix from row-major data, rejecting bad lengths and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries supplied for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite entry {} at ({}, {})",
                data[pos],
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::from_vec(r, c, rows.concat())
    }

    /// A single column.
    pub fn column(v: &[f64]) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    /// Entries drawn independently from `U(-bound, bound)`.
    pub fn random_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Self { rows, cols, data }
    }

    /// A random orthogonal matrix: the `Q` factor of a random square matrix.
    pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let a = Self::random_uniform(n, n, 1.0, rng);
        qr_complete(&a).expect("finite random matrix").q
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

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
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

    /// `self · v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::Shape(format!(
                "cannot apply {}x{} matrix to vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok(self.mul_vec(v))
    }

    /// Unchecked matrix-vector product used on hot paths.
    pub(crate) fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| dot(self.row(i), v))
            .collect()
    }

    /// `selfᵀ · v`.
    pub(crate) fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0.0 {
                for (o, &a) in out.iter_mut().zip(self.row(i)) {
                    *o += a * vi;
                }
            }
        }
        out
    }

    /// `self += alpha · u vᵀ`.
    pub(crate) fn add_outer(&mut self, alpha: f64, u: &[f64], v: &[f64]) {
        debug_assert_eq!((u.len(), v.len()), (self.rows, self.cols));
        for (i, &ui) in u.iter().enumerate() {
            let s = alpha * ui;
            if s != 0.0 {
                let cols = self.cols;
                for (a, &vj) in self.data[i * cols..(i + 1) * cols].iter_mut().zip(v) {
                    *a += s * vj;
                }
            }
        }
    }

    /// `self + alpha · other`, shapes must agree.
    pub fn axpy(&self, alpha: f64, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "cannot add {:?} and {:?} matrices",
                self.shape(),
                other.shape()
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + alpha * b)
            .collect();
        Ok(Matrix { data, ..*self })
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        Matrix {
            data: self.data.iter().map(|x| alpha * x).collect(),
            ..*self
        }
    }

    /// Largest absolute entry (0 for an empty matrix).
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Max-norm of `self − other`; `INFINITY` when shapes differ.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        if self.shape() != other.shape() {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Max-norm of `selfᵀ self − I`.
    pub fn orthogonality_defect(&self) -> f64 {
        let g = matmul(&self.transpose(), self).expect("square product");
        g.max_abs_diff(&Matrix::identity(self.cols))
    }

    pub fn is_orthogonal(&self, tol: f64) -> bool {
        self.rows == self.cols && self.orthogonality_defect() <= tol
    }

    /// Copy of rows `r0..r1` and columns `c0..c1`.
    pub fn block(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> Matrix {
        let mut b = Matrix::zeros(r1 - r0, c1 - c0);
        for i in r0..r1 {
            for j in c0..c1 {
                b[(i - r0, j - c0)] = self[(i, j)];
            }
        }
        b
    }

    /// Writes `b` with its top-left corner at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, b: &Matrix) {
        for i in 0..b.rows {
            for j in 0..b.cols {
                self[(r0 + i, c0 + j)] = b[(i, j)];
            }
        }
    }

    /// `[1 0; 0 self]`, the block-diagonal extension by a leading one.
    pub fn extend_by_one(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows + 1, self.cols + 1);
        m[(0, 0)] = 1.0;
        m.set_block(1, 1, self);
        m
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
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

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Matrix product `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut c = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a[(i, k)];
            if aik == 0.0 {
                continue;
            }
            let brow = b.row(k);
            let cols = c.cols;
            for (cij, &bkj) in c.data[i * cols..(i + 1) * cols].iter_mut().zip(brow) {
                *cij += aik * bkj;
            }
        }
    }
    Ok(c)
}

/// The `n × k` matrix of the inclusion `ℝᵏ ↪ ℝⁿ` into the first `k` coordinates.
pub fn inclusion_matrix(k: usize, n: usize) -> Result<Matrix> {
    if k > n {
        return Err(Error::Shape(format!(
            "cannot include R^{k} into R^{n}"
        )));
    }
    let mut m = Matrix::zeros(n, k);
    for i in 0..k {
        m[(i, i)] = 1.0;
    }
    Ok(m)
}

/// Result of [`qr_complete`]: `a = q · Inc · r`.
#[derive(Debug, Clone, PartialEq)]
pub struct QrComplete {
    /// Orthogonal `n × n` factor.
    pub q: Matrix,
    /// Upper-triangular `min(n, m) × m` factor.
    pub r: Matrix,
}

impl QrComplete {
    /// `q · Inc · r`.
    pub fn reconstruct(&self) -> Matrix {
        let inc = inclusion_matrix(self.r.rows(), self.q.rows()).expect("k <= n");
        let qi = matmul(&self.q, &inc).expect("q is n x n");
        matmul(&qi, &self.r).expect("inc is n x k")
    }
}

/// Complete QR decomposition by Householder reflections.
///
/// For an `n × m` input returns orthogonal `Q` (`n × n`) and upper-triangular
/// `R` (`k × m`, `k = min(n, m)`) with `a = Q · Inc · R`. Diagonal signs of `R`
/// are whatever the reflections produce; no canonicalization is applied.
/// Entries of `R` below the diagonal are exact zeros.
pub fn qr_complete(a: &Matrix) -> Result<QrComplete> {
    let (n, m) = a.shape();
    if n == 0 || m == 0 {
        return Err(Error::Shape(format!("qr_complete needs a nonempty matrix, got {n}x{m}")));
    }
    if !a.is_finite() {
        return Err(Error::Data("qr_complete input has non-finite entries".into()));
    }
    let mut r = a.clone();
    let mut q = Matrix::identity(n);
    let k = n.min(m);
    let mut v = vec![0.0; n];
    for j in 0..k.min(n - 1) {
        let len = n - j;
        let x_norm = (j..n).map(|i| r[(i, j)] * r[(i, j)]).sum::<f64>().sqrt();
        if x_norm == 0.0 {
            continue;
        }
        let x0 = r[(j, j)];
        let alpha = if x0 >= 0.0 { -x_norm } else { x_norm };
        for i in 0..len {
            v[i] = r[(j + i, j)];
        }
        v[0] -= alpha;
        let v_norm = norm(&v[..len]);
        if v_norm == 0.0 {
            continue;
        }
        for vi in &mut v[..len] {
            *vi /= v_norm;
        }
        // R <- (I - 2vvᵀ) R on rows j.., columns j..
        for c in j..m {
            let s: f64 = (0..len).map(|i| v[i] * r[(j + i, c)]).sum();
            for i in 0..len {
                r[(j + i, c)] -= 2.0 * v[i] * s;
            }
        }
        // Q <- Q (I - 2vvᵀ) on columns j..
        for row in 0..n {
            let s: f64 = (0..len).map(|i| q[(row, j + i)] * v[i]).sum();
            for i in 0..len {
                q[(row, j + i)] -= 2.0 * s * v[i];
            }
        }
        r[(j, j)] = alpha;
        for i in j + 1..n {
            r[(i, j)] = 0.0;
        }
    }
    let mut r_top = r.block(0, k, 0, m);
    for i in 0..k {
        for j in 0..i.min(m) {
            r_top[(i, j)] = 0.0;
        }
    }
    Ok(QrComplete { q, r: r_top })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn identity_product() {
        let i2 = Matrix::identity(2);
        assert_eq!(matmul(&i2, &i2).unwrap(), i2);
    }

    #[test]
    fn hand_product() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = m(&[&[0.0], &[1.0]]);
        assert_eq!(matmul(&a, &b).unwrap(), m(&[&[2.0], &[4.0]]));
    }

    #[test]
    fn zero_annihilates() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&a, &Matrix::zeros(2, 3)).unwrap(), Matrix::zeros(2, 3));
    }

    #[test]
    fn product_shape_mismatch() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(matmul(&a, &a), Err(Error::Shape(_))));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            Matrix::from_vec(1, 2, vec![1.0, f64::NAN]),
            Err(Error::Data(_))
        ));
        assert!(matches!(Matrix::from_vec(1, 2, vec![1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn inclusion_examples() {
        assert_eq!(inclusion_matrix(2, 2).unwrap(), Matrix::identity(2));
        assert_eq!(inclusion_matrix(1, 3).unwrap(), m(&[&[1.0], &[0.0], &[0.0]]));
        assert_eq!(
            inclusion_matrix(2, 3).unwrap(),
            m(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]])
        );
        assert!(inclusion_matrix(3, 2).is_err());
    }

    #[test]
    fn qr_identity() {
        let qr = qr_complete(&Matrix::identity(2)).unwrap();
        assert!(qr.reconstruct().max_abs_diff(&Matrix::identity(2)) < 1e-15);
        assert!(qr.q.is_orthogonal(1e-15));
    }

    #[test]
    fn qr_three_four() {
        let a = m(&[&[3.0], &[4.0]]);
        let qr = qr_complete(&a).unwrap();
        assert_eq!(qr.r.shape(), (1, 1));
        assert!((qr.r[(0, 0)].abs() - 5.0).abs() < 1e-14);
        assert!(qr.q.is_orthogonal(1e-14));
        assert!(qr.reconstruct().max_abs_diff(&a) < 1e-14);
    }

    #[test]
    fn qr_wide() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Matrix::random_uniform(3, 5, 1.0, &mut rng);
        let qr = qr_complete(&a).unwrap();
        assert_eq!(qr.q.shape(), (3, 3));
        assert_eq!(qr.r.shape(), (3, 5));
        assert!(matmul(&qr.q, &qr.r).unwrap().max_abs_diff(&a) <= 1e-10);
    }

    #[test]
    fn qr_rank_deficient_and_zero() {
        let z = Matrix::zeros(3, 2);
        let qr = qr_complete(&z).unwrap();
        assert!(qr.reconstruct().max_abs_diff(&z) == 0.0);
        let a = m(&[&[1.0, 2.0], &[2.0, 4.0], &[3.0, 6.0]]);
        let qr = qr_complete(&a).unwrap();
        assert!(qr.reconstruct().max_abs_diff(&a) < 1e-13);
        assert!(qr.q.is_orthogonal(1e-13));
    }

    #[test]
    fn qr_rejects_nan() {
        let mut a = Matrix::zeros(2, 2);
        a[(0, 1)] = f64::INFINITY;
        assert!(matches!(qr_complete(&a), Err(Error::Data(_))));
    }

    #[test]
    fn extend_by_one_layout() {
        let e = Matrix::identity(2).scale(2.0).extend_by_one();
        assert_eq!(e, m(&[&[1.0, 0.0, 0.0], &[0.0, 2.0, 0.0], &[0.0, 0.0, 2.0]]));
    }

    fn arb_matrix() -> impl Strategy<Value = Matrix> {
        (1usize..9, 1usize..9).prop_flat_map(|(n, m)| {
            prop::collection::vec(-10.0f64..10.0, n * m)
                .prop_map(move |d| Matrix::from_vec(n, m, d).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn qr_reconstructs_and_is_orthogonal(a in arb_matrix()) {
            let qr = qr_complete(&a).unwrap();
            prop_assert!(qr.reconstruct().max_abs_diff(&a) <= 1e-10);
            prop_assert!(qr.q.orthogonality_defect() <= 1e-10);
            for i in 0..qr.r.rows() {
                for j in 0..i.min(qr.r.cols()) {
                    prop_assert_eq!(qr.r[(i, j)], 0.0);
                }
            }
        }

        #[test]
        fn transpose_is_involutive(a in arb_matrix()) {
            prop_assert_eq!(a.transpose().transpose(), a);
        }
    }
}
