//! Operator Schmidt decomposition of bipartite operators.
//!
//! An operator `M` on `C^{d_A} (x) C^{d_B}` is realigned into a
//! `d_A^2 x d_B^2` matrix whose SVD yields the orthogonal expansion
//! `M = sum_r c_r A_r (x) B_r` with Hilbert-Schmidt orthonormal factors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    self, c, check_finite, kron, svd, unitarity_residual, unvec_row_major, ComplexMatrix, Tolerance,
};

/// Which tensor factor of a bipartite system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::A => write!(f, "A"),
            Side::B => write!(f, "B"),
        }
    }
}

impl std::str::FromStr for Side {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Side::A),
            "B" | "b" => Ok(Side::B),
            other => Err(Error::Parse(format!("unknown side {other:?}"))),
        }
    }
}

/// A unitary on a `d_A x d_B` system. Basis state `|i>_A |k>_B` has index
/// `i * d_B + k` (0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteUnitary {
    d_a: usize,
    d_b: usize,
    matrix: ComplexMatrix,
}

impl BipartiteUnitary {
    pub fn new(d_a: usize, d_b: usize, matrix: ComplexMatrix, tol: &Tolerance) -> Result<Self> {
        check_bipartite_shape(&matrix, d_a, d_b)?;
        check_finite(&matrix)?;
        let res = unitarity_residual(&matrix);
        if res > tol.unitarity_tol {
            return Err(Error::NotUnitary(res));
        }
        Ok(BipartiteUnitary { d_a, d_b, matrix })
    }

    pub fn d_a(&self) -> usize {
        self.d_a
    }

    pub fn d_b(&self) -> usize {
        self.d_b
    }

    pub fn dim(&self, side: Side) -> usize {
        match side {
            Side::A => self.d_a,
            Side::B => self.d_b,
        }
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    /// `(W1 (x) W2) U (W3 (x) W4)`.
    pub fn conjugate_local(
        &self,
        before: (&ComplexMatrix, &ComplexMatrix),
        after: (&ComplexMatrix, &ComplexMatrix),
        tol: &Tolerance,
    ) -> Result<Self> {
        let m = kron(before.0, before.1) * &self.matrix * kron(after.0, after.1);
        BipartiteUnitary::new(self.d_a, self.d_b, m, tol)
    }
}

pub(crate) fn check_bipartite_shape(m: &ComplexMatrix, d_a: usize, d_b: usize) -> Result<()> {
    if d_a == 0 || d_b == 0 {
        return Err(Error::ShapeError("local dimensions must be positive".into()));
    }
    let d = d_a * d_b;
    if m.nrows() != d || m.ncols() != d {
        return Err(Error::ShapeError(format!(
            "expected a {d}x{d} operator for {d_a}x{d_b}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Orthogonal operator Schmidt expansion `M = sum_r c_r a_r (x) b_r`.
#[derive(Debug, Clone)]
pub struct SchmidtDecomposition {
    pub d_a: usize,
    pub d_b: usize,
    pub coefficients: Vec<f64>,
    pub a_ops: Vec<ComplexMatrix>,
    pub b_ops: Vec<ComplexMatrix>,
}

impl SchmidtDecomposition {
    pub fn rank(&self) -> usize {
        self.coefficients.len()
    }

    pub fn reconstruct(&self) -> ComplexMatrix {
        let d = self.d_a * self.d_b;
        let mut out = ComplexMatrix::zeros(d, d);
        for ((cr, a), b) in self.coefficients.iter().zip(&self.a_ops).zip(&self.b_ops) {
            out += kron(a, b).scale(*cr);
        }
        out
    }

    /// Factors on one side, in coefficient order.
    pub fn factors(&self, side: Side) -> &[ComplexMatrix] {
        match side {
            Side::A => &self.a_ops,
            Side::B => &self.b_ops,
        }
    }

    /// Factors on one side with the Schmidt coefficient folded in.
    pub fn weighted_factors(&self, side: Side) -> Vec<ComplexMatrix> {
        self.factors(side)
            .iter()
            .zip(&self.coefficients)
            .map(|(m, &cr)| m.scale(cr))
            .collect()
    }
}

/// Realignment: `out[(i d_A + j), (k d_B + l)] = M[(i d_B + k), (j d_B + l)]`,
/// so that `A (x) B` maps to `vec(A) vec(B)^T` (row-major vec).
pub fn realign(m: &ComplexMatrix, d_a: usize, d_b: usize) -> Result<ComplexMatrix> {
    check_bipartite_shape(m, d_a, d_b)?;
    let mut out = ComplexMatrix::zeros(d_a * d_a, d_b * d_b);
    for i in 0..d_a {
        for j in 0..d_a {
            for k in 0..d_b {
                for l in 0..d_b {
                    out[(i * d_a + j, k * d_b + l)] = m[(i * d_b + k, j * d_b + l)];
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`realign`].
pub fn unrealign(r: &ComplexMatrix, d_a: usize, d_b: usize) -> Result<ComplexMatrix> {
    if r.nrows() != d_a * d_a || r.ncols() != d_b * d_b {
        return Err(Error::ShapeError(format!(
            "expected a {}x{} realigned matrix, got {}x{}",
            d_a * d_a,
            d_b * d_b,
            r.nrows(),
            r.ncols()
        )));
    }
    let d = d_a * d_b;
    let mut out = ComplexMatrix::zeros(d, d);
    for i in 0..d_a {
        for j in 0..d_a {
            for k in 0..d_b {
                for l in 0..d_b {
                    out[(i * d_b + k, j * d_b + l)] = r[(i * d_a + j, k * d_b + l)];
                }
            }
        }
    }
    Ok(out)
}

/// Orthogonal Schmidt decomposition. The operator need not be unitary.
///
/// Coefficients below `rank_rel_tol` times the largest one are dropped. For
/// each term the first entry of `vec(a_r)` with modulus above `1e-8` is made
/// real positive; the compensating phase goes into `b_r`.
pub fn schmidt_decompose(
    m: &ComplexMatrix,
    d_a: usize,
    d_b: usize,
    tol: &Tolerance,
) -> Result<SchmidtDecomposition> {
    check_finite(m)?;
    let r = realign(m, d_a, d_b)?;
    let dec = svd(&r)?;
    let s_max = dec.s.first().copied().unwrap_or(0.0);
    let rank = if s_max == 0.0 {
        0
    } else {
        dec.s.iter().filter(|&&x| x > tol.rank_rel_tol * s_max).count()
    };

    let mut coefficients = Vec::with_capacity(rank);
    let mut a_ops = Vec::with_capacity(rank);
    let mut b_ops = Vec::with_capacity(rank);
    for idx in 0..rank {
        let u = dec.u.column(idx);
        let v = dec.v.column(idx);
        let phase = u
            .iter()
            .find(|z| z.norm() > 1e-8)
            .map(|z| z / z.norm())
            .unwrap_or(c(1.0, 0.0));
        let a_vec: Vec<_> = u.iter().map(|z| z * phase.conj()).collect();
        let b_vec: Vec<_> = v.iter().map(|z| z.conj() * phase).collect();
        coefficients.push(dec.s[idx]);
        a_ops.push(unvec_row_major(&a_vec, d_a, d_a));
        b_ops.push(unvec_row_major(&b_vec, d_b, d_b));
    }
    Ok(SchmidtDecomposition { d_a, d_b, coefficients, a_ops, b_ops })
}

/// Number of terms in the orthogonal Schmidt expansion.
pub fn schmidt_rank(m: &ComplexMatrix, d_a: usize, d_b: usize, tol: &Tolerance) -> Result<usize> {
    let r = realign(m, d_a, d_b)?;
    linalg::numerical_rank(&r, tol)
}

/// Schmidt coefficients together with the singular-value gap at the cut.
pub fn schmidt_rank_report(
    m: &ComplexMatrix,
    d_a: usize,
    d_b: usize,
    tol: &Tolerance,
) -> Result<linalg::RankReport> {
    let r = realign(m, d_a, d_b)?;
    linalg::rank_report(&r, tol)
}
