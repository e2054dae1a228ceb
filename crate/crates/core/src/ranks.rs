//! Partial transposes and the rank inequality
//! `rank(sum R_i (x) S_i^T) <= K rank(sum R_i (x) S_i)`.

use rand::Rng;
use serde::Serialize;

use crate::controlled::check_controlled;
use crate::error::{Error, Result};
use crate::linalg::{kron, rank_report, ComplexMatrix, RankReport, Tolerance};
use crate::random::{gaussian_matrix, SeededRng};
use crate::schmidt::{check_bipartite_shape, schmidt_rank, BipartiteUnitary, Side};

/// Transposes one tensor factor. For side B every `d_B x d_B` block is
/// transposed in place; for side A the blocks trade places.
pub fn partial_transpose(m: &ComplexMatrix, d_a: usize, d_b: usize, side: Side) -> Result<ComplexMatrix> {
    check_bipartite_shape(m, d_a, d_b)?;
    let d = d_a * d_b;
    let mut out = ComplexMatrix::zeros(d, d);
    for i in 0..d_a {
        for j in 0..d_a {
            for k in 0..d_b {
                for l in 0..d_b {
                    let (row, col) = match side {
                        Side::B => (i * d_b + l, j * d_b + k),
                        Side::A => (j * d_b + k, i * d_b + l),
                    };
                    out[(row, col)] = m[(i * d_b + k, j * d_b + l)];
                }
            }
        }
    }
    Ok(out)
}

/// `K` pairs `(R_i, S_i)` with uniform shapes within each list.
#[derive(Debug, Clone)]
pub struct KroneckerSum {
    pub r_ops: Vec<ComplexMatrix>,
    pub s_ops: Vec<ComplexMatrix>,
}

impl KroneckerSum {
    pub fn new(r_ops: Vec<ComplexMatrix>, s_ops: Vec<ComplexMatrix>) -> Result<Self> {
        let ks = KroneckerSum { r_ops, s_ops };
        ks.validate()?;
        Ok(ks)
    }

    pub fn k(&self) -> usize {
        self.r_ops.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.r_ops.is_empty() || self.r_ops.len() != self.s_ops.len() {
            return Err(Error::ShapeError("need K >= 1 pairs with as many R as S operators".into()));
        }
        for list in [&self.r_ops, &self.s_ops] {
            let shape = list[0].shape();
            if shape.0 == 0 || shape.1 == 0 || list.iter().any(|m| m.shape() != shape) {
                return Err(Error::ShapeError("operators within a list must share one nonempty shape".into()));
            }
            for m in list {
                crate::linalg::check_finite(m)?;
            }
        }
        Ok(())
    }

    fn sum_with(&self, f: impl Fn(&ComplexMatrix, &ComplexMatrix) -> ComplexMatrix) -> ComplexMatrix {
        self.r_ops
            .iter()
            .zip(&self.s_ops)
            .map(|(r, s)| f(r, s))
            .reduce(|a, b| a + b)
            .expect("K >= 1")
    }

    /// `sum R_i (x) S_i`.
    pub fn sum(&self) -> ComplexMatrix {
        self.sum_with(kron)
    }

    /// `sum R_i (x) S_i^T`.
    pub fn sum_transposed_s(&self) -> ComplexMatrix {
        self.sum_with(|r, s| kron(r, &s.transpose()))
    }

    /// `sum R_i^T (x) S_i`.
    pub fn sum_transposed_r(&self) -> ComplexMatrix {
        self.sum_with(|r, s| kron(&r.transpose(), s))
    }
}

/// Rank bookkeeping for one instance, with the singular-value gaps that
/// decided each rank.
#[derive(Debug, Clone, Serialize)]
pub struct RankInequalityReport {
    pub k: usize,
    pub lhs_rank: usize,
    pub rhs_rank: usize,
    pub holds: bool,
    /// `rank(sum R_i^T (x) S_i)`, equal to `lhs_rank` in exact arithmetic.
    pub symmetric_rank: usize,
    pub lhs: RankReport,
    pub rhs: RankReport,
}

pub fn check_rank_inequality(ks: &KroneckerSum, tol: &Tolerance) -> Result<RankInequalityReport> {
    tol.validate()?;
    ks.validate()?;
    let lhs = rank_report(&ks.sum_transposed_s(), tol)?;
    let rhs = rank_report(&ks.sum(), tol)?;
    let symmetric = rank_report(&ks.sum_transposed_r(), tol)?;
    if symmetric.rank != lhs.rank {
        return Err(Error::TheoremViolation(format!(
            "rank of sum R^T (x) S is {} but rank of sum R (x) S^T is {}",
            symmetric.rank, lhs.rank
        )));
    }
    Ok(RankInequalityReport {
        k: ks.k(),
        lhs_rank: lhs.rank,
        rhs_rank: rhs.rank,
        holds: lhs.rank <= ks.k() * rhs.rank,
        symmetric_rank: symmetric.rank,
        lhs,
        rhs,
    })
}

fn random_rank_limited(rng: &mut SeededRng, rows: usize, cols: usize, rank: usize) -> ComplexMatrix {
    gaussian_matrix(rng, rows, rank) * gaussian_matrix(rng, rank, cols)
}

/// Random instance with `K` terms and every dimension drawn from `2..=6`.
///
/// Half of the instances use complex Gaussian factors; the other half draw
/// each factor with a random rank so that `sum R_i (x) S_i` is often rank
/// deficient, which is where the inequality has content.
pub fn random_kronecker_sum(rng: &mut SeededRng, k: usize) -> KroneckerSum {
    let mut dim = || rng.random_range(2..=6usize);
    let (m1, n1, m2, n2) = (dim(), dim(), dim(), dim());
    let low_rank = rng.random_bool(0.5);
    let mut draw = |rows: usize, cols: usize| {
        if low_rank {
            let rank = rng.random_range(1..=rows.min(cols));
            random_rank_limited(rng, rows, cols, rank)
        } else {
            gaussian_matrix(rng, rows, cols)
        }
    };
    let r_ops = (0..k).map(|_| draw(m1, n1)).collect();
    let s_ops = (0..k).map(|_| draw(m2, n2)).collect();
    KroneckerSum { r_ops, s_ops }
}

/// Outcome of checking `rank U^Gamma == rank U` for a Schmidt-rank-3 unitary.
#[derive(Debug, Clone, Serialize)]
pub struct Rank3Report {
    pub rank_u: usize,
    pub rank_partial_transpose: usize,
    pub controlled_side: Option<Side>,
    pub equal: bool,
    pub experimental: bool,
    pub partial_transpose: RankReport,
}

/// Checks `rank U^Gamma = rank U` (B-side transpose) for unitaries with
/// `d_A <= 3` and Schmidt rank at most 3. With `experimental` set, larger
/// `d_A` is accepted and anomalies are reported instead of raised.
pub fn verify_rank3_unitary_equality(
    u: &BipartiteUnitary,
    tol: &Tolerance,
    experimental: bool,
) -> Result<Rank3Report> {
    tol.validate()?;
    let (d_a, d_b) = (u.d_a(), u.d_b());
    if d_a > 3 && !experimental {
        return Err(Error::UnsupportedShape(format!("d_A = {d_a} > 3 needs the experimental flag")));
    }
    let sr = schmidt_rank(u.matrix(), d_a, d_b, tol)?;
    if sr > 3 {
        return Err(Error::UnsupportedShape(format!("Schmidt rank {sr} exceeds 3")));
    }
    let mut controlled_side = None;
    for side in [Side::A, Side::B] {
        if check_controlled(u, side, tol)?.is_controlled {
            controlled_side = Some(side);
            break;
        }
    }
    if controlled_side.is_none() && !experimental {
        return Err(Error::TheoremViolation(format!(
            "Schmidt-rank-{sr} unitary on {d_a}x{d_b} is controlled from neither side"
        )));
    }
    let pt = rank_report(&partial_transpose(u.matrix(), d_a, d_b, Side::B)?, tol)?;
    let rank_u = d_a * d_b;
    let equal = pt.rank == rank_u;
    if !equal && !experimental {
        return Err(Error::TheoremViolation(format!("rank of the partial transpose is {} < {rank_u}", pt.rank)));
    }
    Ok(Rank3Report {
        rank_u,
        rank_partial_transpose: pt.rank,
        controlled_side,
        equal,
        experimental,
        partial_transpose: pt,
    })
}
