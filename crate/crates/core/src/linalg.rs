//! Dense complex linear algebra with one tolerance policy.
//!
//! Every matrix in the crate is a [`ComplexMatrix`] (an `nalgebra` dynamic
//! matrix of `Complex64`). Decompositions are delegated to `faer`, whose
//! complex SVD stays accurate on rank-deficient input; this module fixes the
//! conventions on top of it: singular values sorted in
//! descending order, eigenvalues ascending, and every numerical decision
//! routed through a [`Tolerance`].
//!
//! Tensor products follow the row-major convention: the basis state
//! `|i>|k>` of a `d_A x d_B` system has index `i * d_B + k`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ComplexMatrix = DMatrix<Complex64>;
pub type ComplexVector = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Numerical thresholds used by all decisions.
///
/// All fields are relative: `rank_rel_tol` is measured against the largest
/// singular value, `commute_tol` against the product of the operands'
/// Frobenius norms, `eig_cluster_tol` against the spectral spread of the
/// matrix being clustered. `unitarity_tol` and `reconstruct_tol` bound
/// Frobenius residuals of unit-scale operators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub unitarity_tol: f64,
    pub rank_rel_tol: f64,
    pub commute_tol: f64,
    pub eig_cluster_tol: f64,
    pub reconstruct_tol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            unitarity_tol: 1e-9,
            rank_rel_tol: 1e-9,
            commute_tol: 1e-9,
            eig_cluster_tol: 1e-7,
            reconstruct_tol: 1e-9,
        }
    }
}

impl Tolerance {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("unitarity_tol", self.unitarity_tol),
            ("rank_rel_tol", self.rank_rel_tol),
            ("commute_tol", self.commute_tol),
            ("eig_cluster_tol", self.eig_cluster_tol),
            ("reconstruct_tol", self.reconstruct_tol),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidMatrix(format!("tolerance {name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Thin singular value decomposition `M = U diag(s) V^dagger`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: ComplexMatrix,
    pub s: Vec<f64>,
    pub v: ComplexMatrix,
}

impl Svd {
    pub fn reconstruct(&self) -> ComplexMatrix {
        let mut us = self.u.clone();
        for (j, &sj) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(sj);
        }
        us * self.v.adjoint()
    }
}

/// Singular values around the rank threshold, kept for auditing decisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub rank: usize,
    pub threshold: f64,
    pub s_max: f64,
    /// Smallest singular value counted in the rank, if any.
    pub smallest_kept: Option<f64>,
    /// Largest singular value treated as zero, if any.
    pub largest_dropped: Option<f64>,
}

impl RankReport {
    /// Ratio between the last kept and first dropped singular value.
    /// Infinite when nothing was dropped or the dropped value is exactly zero.
    pub fn gap(&self) -> f64 {
        match (self.smallest_kept, self.largest_dropped) {
            (Some(k), Some(d)) if d > 0.0 => k / d,
            _ => f64::INFINITY,
        }
    }
}

pub fn check_finite(m: &ComplexMatrix) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::InvalidMatrix(format!("empty {}x{} matrix", m.nrows(), m.ncols())));
    }
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidMatrix("non-finite entry".into()))
    }
}

fn check_square(m: &ComplexMatrix, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::ShapeError(format!("{what} must be square, got {}x{}", m.nrows(), m.ncols())));
    }
    Ok(m.nrows())
}

fn check_same_shape(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeError(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn frobenius(m: &ComplexMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn spectral_norm(m: &ComplexMatrix) -> f64 {
    svd(m).map(|d| d.s.first().copied().unwrap_or(0.0)).unwrap_or(f64::NAN)
}

pub fn identity(n: usize) -> ComplexMatrix {
    ComplexMatrix::identity(n, n)
}

pub fn dagger(m: &ComplexMatrix) -> ComplexMatrix {
    m.adjoint()
}

pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a.kronecker(b)
}

/// Kronecker product of a list of factors, first factor most significant.
pub fn kron_all<'a, I>(factors: I) -> ComplexMatrix
where
    I: IntoIterator<Item = &'a ComplexMatrix>,
{
    factors
        .into_iter()
        .fold(identity(1), |acc, f| acc.kronecker(f))
}

pub fn diag(entries: &[Complex64]) -> ComplexMatrix {
    ComplexMatrix::from_diagonal(&ComplexVector::from_row_slice(entries))
}

pub fn diag_real(entries: &[f64]) -> ComplexMatrix {
    ComplexMatrix::from_diagonal(&ComplexVector::from_iterator(entries.len(), entries.iter().map(|&x| c(x, 0.0))))
}

/// Builds a matrix from row-major complex entries.
pub fn from_rows(rows: usize, cols: usize, entries: &[Complex64]) -> Result<ComplexMatrix> {
    if entries.len() != rows * cols {
        return Err(Error::ShapeError(format!("{} entries for a {rows}x{cols} matrix", entries.len())));
    }
    let m = ComplexMatrix::from_row_slice(rows, cols, entries);
    check_finite(&m)?;
    Ok(m)
}

pub fn from_real_rows(rows: usize, cols: usize, entries: &[f64]) -> ComplexMatrix {
    ComplexMatrix::from_row_iterator(rows, cols, entries.iter().map(|&x| c(x, 0.0)))
}

fn to_faer(m: &ComplexMatrix) -> faer::Mat<Complex64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, Complex64>) -> ComplexMatrix {
    ComplexMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Thin SVD with singular values sorted in descending order.
pub fn svd(m: &ComplexMatrix) -> Result<Svd> {
    check_finite(m)?;
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidMatrix("empty matrix".into()));
    }
    let dec = to_faer(m)
        .thin_svd()
        .map_err(|e| Error::InternalContractViolation(format!("SVD did not converge: {e:?}")))?;
    let s: Vec<f64> = (0..rows.min(cols)).map(|k| dec.S()[k].re).collect();
    let u = from_faer(dec.U());
    let v = from_faer(dec.V());
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let u_sorted = ComplexMatrix::from_columns(&order.iter().map(|&j| u.column(j)).collect::<Vec<_>>());
    let v_sorted = ComplexMatrix::from_columns(&order.iter().map(|&j| v.column(j)).collect::<Vec<_>>());
    let s_sorted = order.iter().map(|&j| s[j]).collect();
    Ok(Svd { u: u_sorted, s: s_sorted, v: v_sorted })
}

fn rank_from_singular_values(s: &[f64], tol: &Tolerance) -> RankReport {
    let s_max = s.first().copied().unwrap_or(0.0);
    let threshold = tol.rank_rel_tol * s_max;
    let rank = if s_max == 0.0 { 0 } else { s.iter().filter(|&&x| x > threshold).count() };
    RankReport {
        rank,
        threshold,
        s_max,
        smallest_kept: if rank > 0 { Some(s[rank - 1]) } else { None },
        largest_dropped: s.get(rank).copied(),
    }
}

pub fn rank_report(m: &ComplexMatrix, tol: &Tolerance) -> Result<RankReport> {
    let d = svd(m)?;
    Ok(rank_from_singular_values(&d.s, tol))
}

/// Number of singular values above `rank_rel_tol * s_max`; zero for the zero matrix.
pub fn numerical_rank(m: &ComplexMatrix, tol: &Tolerance) -> Result<usize> {
    rank_report(m, tol).map(|r| r.rank)
}

pub fn hermiticity_residual(h: &ComplexMatrix) -> f64 {
    let n = frobenius(h);
    if n == 0.0 {
        return 0.0;
    }
    frobenius(&(h - h.adjoint())) / n
}

/// Eigendecomposition of a Hermitian matrix: `H = W diag(lambda) W^dagger`,
/// eigenvalues ascending.
pub fn eig_hermitian(h: &ComplexMatrix, tol: &Tolerance) -> Result<(Vec<f64>, ComplexMatrix)> {
    check_finite(h)?;
    check_square(h, "Hermitian input")?;
    let res = hermiticity_residual(h);
    if res > tol.commute_tol {
        return Err(Error::NotHermitian(res));
    }
    // symmetrize so the solver sees an exactly Hermitian matrix
    let hs = (h + h.adjoint()).scale(0.5);
    let eig = to_faer(&hs)
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::InternalContractViolation(format!("eigensolver did not converge: {e:?}")))?;
    let n = hs.nrows();
    let vals: Vec<f64> = (0..n).map(|k| eig.S()[k].re).collect();
    let vecs = from_faer(eig.U());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
    let w = ComplexMatrix::from_columns(&order.iter().map(|&j| vecs.column(j)).collect::<Vec<_>>());
    Ok((order.iter().map(|&j| vals[j]).collect(), w))
}

/// Eigenvalues of a general square matrix.
pub fn eigenvalues(m: &ComplexMatrix) -> Result<Vec<Complex64>> {
    check_finite(m)?;
    let n = check_square(m, "eigenvalue input")?;
    if n == 1 {
        return Ok(vec![m[(0, 0)]]);
    }
    to_faer(m)
        .eigenvalues()
        .map_err(|e| Error::InternalContractViolation(format!("eigenvalue iteration did not converge: {e:?}")))
}

/// `||M M^dagger - M^dagger M||_F / ||M||_F^2`.
pub fn normality_residual(m: &ComplexMatrix) -> f64 {
    let n = frobenius(m);
    if n == 0.0 {
        return 0.0;
    }
    let md = m.adjoint();
    frobenius(&(m * &md - &md * m)) / (n * n)
}

/// `||M N - N M||_F / (||M||_F ||N||_F)`.
pub fn commutator_residual(m: &ComplexMatrix, n: &ComplexMatrix) -> f64 {
    let scale = frobenius(m) * frobenius(n);
    if scale == 0.0 {
        return 0.0;
    }
    frobenius(&(m * n - n * m)) / scale
}

pub fn unitarity_residual(m: &ComplexMatrix) -> f64 {
    if m.nrows() != m.ncols() {
        return f64::INFINITY;
    }
    frobenius(&(m * m.adjoint() - identity(m.nrows())))
}

pub fn is_normal(m: &ComplexMatrix, tol: &Tolerance) -> Result<bool> {
    check_finite(m)?;
    check_square(m, "normality input")?;
    Ok(normality_residual(m) <= tol.commute_tol)
}

pub fn commutes(m: &ComplexMatrix, n: &ComplexMatrix, tol: &Tolerance) -> Result<bool> {
    check_finite(m)?;
    check_finite(n)?;
    check_square(m, "commutator input")?;
    check_same_shape(m, n)?;
    Ok(commutator_residual(m, n) <= tol.commute_tol)
}

pub fn is_unitary(m: &ComplexMatrix, tol: &Tolerance) -> Result<bool> {
    check_finite(m)?;
    check_square(m, "unitarity input")?;
    Ok(unitarity_residual(m) <= tol.unitarity_tol)
}

/// Orthonormal basis (as columns) of the numerical null space of `m`.
pub fn null_space(m: &ComplexMatrix, tol: &Tolerance) -> Result<ComplexMatrix> {
    let n = m.ncols();
    // pad with zero rows so the thin SVD exposes all right singular vectors
    let padded = if m.nrows() < n {
        let mut p = ComplexMatrix::zeros(n, n);
        p.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let d = svd(&padded)?;
    let rank = rank_from_singular_values(&d.s, tol).rank;
    Ok(d.v.columns(rank, n - rank).into_owned())
}

/// Extends orthonormal columns to a full unitary basis.
pub fn complete_basis(cols: &ComplexMatrix) -> Result<ComplexMatrix> {
    let n = cols.nrows();
    let k = cols.ncols();
    if k > n {
        return Err(Error::ShapeError(format!("{k} columns cannot be orthonormal in dimension {n}")));
    }
    if k == n {
        return Ok(cols.clone());
    }
    if k == 0 {
        return Ok(identity(n));
    }
    let comp = null_space(&cols.adjoint(), &Tolerance::default())?;
    let mut out = ComplexMatrix::zeros(n, n);
    out.columns_mut(0, k).copy_from(cols);
    out.columns_mut(k, n - k).copy_from(&comp.columns(0, n - k));
    Ok(out)
}

/// Unitary whose first column is `v / |v|`.
pub fn unitary_with_first_column(v: &ComplexVector) -> Result<ComplexMatrix> {
    let norm = v.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::InvalidMatrix("cannot build a unitary from a zero vector".into()));
    }
    let col = ComplexMatrix::from_column_slice(v.len(), 1, (v / c(norm, 0.0)).as_slice());
    complete_basis(&col)
}

/// Row-major vectorization: entry `(i, j)` goes to position `i * cols + j`.
pub fn vec_row_major(m: &ComplexMatrix) -> ComplexVector {
    ComplexVector::from_iterator(m.nrows() * m.ncols(), m.transpose().iter().copied())
}

pub fn unvec_row_major(v: &[Complex64], rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_row_slice(rows, cols, v)
}

/// Hilbert-Schmidt inner product `tr(A^dagger B)`.
pub fn hs_inner(a: &ComplexMatrix, b: &ComplexMatrix) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// Largest off-diagonal magnitude relative to the Frobenius norm.
pub fn off_diagonal_residual(m: &ComplexMatrix) -> f64 {
    let scale = frobenius(m).max(f64::MIN_POSITIVE);
    let mut acc = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j {
                acc += m[(i, j)].norm_sqr();
            }
        }
    }
    acc.sqrt() / scale
}

/// Groups sorted real values into clusters whose consecutive gaps are at most
/// `rel_tol * max(spread, 1e-300)`. Returns index ranges into the input.
pub fn cluster_sorted(values: &[f64], rel_tol: f64, scale: f64) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    if values.is_empty() {
        return out;
    }
    let gap = rel_tol * scale.max(f64::MIN_POSITIVE);
    let mut start = 0;
    for i in 1..values.len() {
        if values[i] - values[i - 1] > gap {
            out.push(start..i);
            start = i;
        }
    }
    out.push(start..values.len());
    out
}

pub fn pauli_x() -> ComplexMatrix {
    from_real_rows(2, 2, &[0.0, 1.0, 1.0, 0.0])
}

pub fn pauli_y() -> ComplexMatrix {
    ComplexMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO])
}

pub fn pauli_z() -> ComplexMatrix {
    from_real_rows(2, 2, &[1.0, 0.0, 0.0, -1.0])
}

/// Projector `|k><k|` in dimension `n` (0-based `k`).
pub fn basis_projector(n: usize, k: usize) -> ComplexMatrix {
    let mut p = ComplexMatrix::zeros(n, n);
    p[(k, k)] = ONE;
    p
}

/// Direct sum `a (+) b`.
pub fn direct_sum(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = ComplexMatrix::zeros(ra + rb, ca + cb);
    out.view_mut((0, 0), (ra, ca)).copy_from(a);
    out.view_mut((ra, ca), (rb, cb)).copy_from(b);
    out
}
