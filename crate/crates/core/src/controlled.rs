//! Controlled-unitary and block-controlled structure.
//!
//! A unitary is controlled from side A when it is locally equivalent to
//! `sum_k |k><k| (x) V_k`. The decision uses the Schmidt factors `A_j` of the
//! controlling side: the families `{A_i A_j^dagger}` and `{A_i^dagger A_j}`
//! must each consist of pairwise commuting normal matrices. Extraction
//! proceeds through a simultaneous SVD of the factors.

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{
    self, c, cluster_sorted, commutator_residual, eig_hermitian, frobenius, identity, kron, 
    numerical_rank, off_diagonal_residual, svd, unitarity_residual, vec_row_major, ComplexMatrix, ComplexVector,
    Tolerance, ONE,
};
use crate::random::{complex_gaussian, rng, SeededRng};
use crate::schmidt::{check_bipartite_shape, schmidt_decompose, schmidt_rank, BipartiteUnitary, SchmidtDecomposition, Side};

const MAX_ATTEMPTS: usize = 8;

/// Verdict of the normal-and-commuting criterion with the residuals behind it.
#[derive(Debug, Clone)]
pub struct ControlledVerdict {
    pub side: Side,
    pub is_controlled: bool,
    /// `{A_i A_j^dagger}` for the side's Schmidt factors.
    pub left_family: Vec<ComplexMatrix>,
    /// `{A_i^dagger A_j}`.
    pub right_family: Vec<ComplexMatrix>,
    pub max_normality_residual: f64,
    pub max_commutator_residual: f64,
}

impl ControlledVerdict {
    /// Largest residual the verdict was decided on.
    pub fn margin(&self) -> f64 {
        self.max_normality_residual.max(self.max_commutator_residual)
    }
}

/// One group of control indices sharing the same controlled unitary.
#[derive(Debug, Clone)]
pub struct ControlGroup {
    /// 0-based basis indices on the controlling side.
    pub indices: Vec<usize>,
    pub v: ComplexMatrix,
}

/// `U = (q (x) I) (sum_g P_g (x) v_g) (r (x) I)` for side A, mirrored for B.
#[derive(Debug, Clone)]
pub struct ControlledForm {
    pub side: Side,
    pub d_a: usize,
    pub d_b: usize,
    pub q: ComplexMatrix,
    pub r: ComplexMatrix,
    pub groups: Vec<ControlGroup>,
}

impl ControlledForm {
    pub fn control_dim(&self) -> usize {
        match self.side {
            Side::A => self.d_a,
            Side::B => self.d_b,
        }
    }

    pub fn target_dim(&self) -> usize {
        match self.side {
            Side::A => self.d_b,
            Side::B => self.d_a,
        }
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    /// Group index for every control basis state.
    pub fn group_of_index(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.control_dim()];
        for (g, grp) in self.groups.iter().enumerate() {
            for &k in &grp.indices {
                out[k] = g;
            }
        }
        out
    }

    /// The block-diagonal middle factor `sum_g P_g (x) v_g` (or its mirror).
    pub fn core(&self) -> ComplexMatrix {
        let dc = self.control_dim();
        let d = self.d_a * self.d_b;
        let mut out = ComplexMatrix::zeros(d, d);
        for grp in &self.groups {
            let mut p = ComplexMatrix::zeros(dc, dc);
            for &k in &grp.indices {
                p[(k, k)] = ONE;
            }
            out += match self.side {
                Side::A => kron(&p, &grp.v),
                Side::B => kron(&grp.v, &p),
            };
        }
        out
    }

    pub fn reconstruct(&self) -> ComplexMatrix {
        let it = identity(self.target_dim());
        match self.side {
            Side::A => kron(&self.q, &it) * self.core() * kron(&self.r, &it),
            Side::B => kron(&it, &self.q) * self.core() * kron(&it, &self.r),
        }
    }

    /// Checks the structural invariants: partition, unitarity, distinct groups.
    pub fn validate(&self, tol: &Tolerance) -> Result<()> {
        let dc = self.control_dim();
        let dt = self.target_dim();
        let bad = |msg: String| Err(Error::InvalidControlledForm(msg));
        if self.q.shape() != (dc, dc) || self.r.shape() != (dc, dc) {
            return bad(format!("q and r must be {dc}x{dc}"));
        }
        if unitarity_residual(&self.q) > tol.unitarity_tol || unitarity_residual(&self.r) > tol.unitarity_tol {
            return bad("q or r is not unitary".into());
        }
        let mut seen = vec![false; dc];
        for (g, grp) in self.groups.iter().enumerate() {
            if grp.indices.is_empty() {
                return bad(format!("group {g} is empty"));
            }
            for &k in &grp.indices {
                if k >= dc || seen[k] {
                    return bad(format!("index {k} is out of range or repeated"));
                }
                seen[k] = true;
            }
            if grp.v.shape() != (dt, dt) {
                return bad(format!("group {g} unitary must be {dt}x{dt}"));
            }
            let res = unitarity_residual(&grp.v);
            if res > tol.unitarity_tol {
                return bad(format!("group {g} unitary has residual {res:.3e}"));
            }
        }
        if seen.iter().any(|s| !s) {
            return bad("groups do not cover every control index".into());
        }
        for (i, gi) in self.groups.iter().enumerate() {
            for gj in &self.groups[i + 1..] {
                if phase_equal(&gi.v, &gj.v, tol.reconstruct_tol).is_some() {
                    return bad(format!("group {i} repeats another group up to phase"));
                }
            }
        }
        Ok(())
    }

    pub fn reconstruction_residual(&self, target: &ComplexMatrix) -> f64 {
        frobenius(&(self.reconstruct() - target))
    }
}

/// Finest simultaneous block structure of one side's Schmidt factors.
#[derive(Debug, Clone)]
pub struct BlockStructure {
    pub side: Side,
    pub w_left: ComplexMatrix,
    pub w_right: ComplexMatrix,
    pub block_sizes: Vec<usize>,
}

impl BlockStructure {
    /// `w_left^dagger M w_right^dagger`.
    pub fn conjugate(&self, m: &ComplexMatrix) -> ComplexMatrix {
        self.w_left.adjoint() * m * self.w_right.adjoint()
    }

    /// Frobenius weight outside the declared diagonal blocks, relative to `|M|`.
    pub fn off_block_residual(&self, m: &ComplexMatrix) -> f64 {
        let x = self.conjugate(m);
        block_leakage(&x, &self.block_sizes)
    }
}

fn block_leakage(x: &ComplexMatrix, sizes: &[usize]) -> f64 {
    let mut owner = Vec::with_capacity(x.nrows());
    for (b, &s) in sizes.iter().enumerate() {
        owner.extend(std::iter::repeat_n(b, s));
    }
    let mut acc = 0.0;
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            if owner[i] != owner[j] {
                acc += x[(i, j)].norm_sqr();
            }
        }
    }
    acc.sqrt() / frobenius(x).max(f64::MIN_POSITIVE)
}

/// `q^dagger a_j r^dagger = diag(diags[j])` for every family member.
#[derive(Debug, Clone)]
pub struct SimultaneousSvd {
    pub q: ComplexMatrix,
    pub r: ComplexMatrix,
    pub diags: Vec<ComplexVector>,
}

/// Result of zeroing one `d_B x d_B` block by local operations on A.
#[derive(Debug, Clone)]
pub struct ZeroBlockReduction {
    pub left: ComplexMatrix,
    pub right: ComplexMatrix,
    /// 0-based `(row, column)` of the zeroed block.
    pub block: (usize, usize),
    /// `|block|_F / |M|_F` after the transformation.
    pub residual: f64,
}

impl ZeroBlockReduction {
    pub fn apply(&self, m: &ComplexMatrix, d_b: usize) -> ComplexMatrix {
        let ib = identity(d_b);
        kron(&self.left, &ib) * m * kron(&self.right, &ib)
    }
}

fn side_decomposition(u: &BipartiteUnitary, tol: &Tolerance) -> Result<SchmidtDecomposition> {
    tol.validate()?;
    let res = unitarity_residual(u.matrix());
    if res > tol.unitarity_tol {
        return Err(Error::NotUnitary(res));
    }
    schmidt_decompose(u.matrix(), u.d_a(), u.d_b(), tol)
}

/// Orthonormal basis of the span of a family, as matrices.
fn span_basis(family: &[ComplexMatrix], tol: &Tolerance) -> Result<Vec<ComplexMatrix>> {
    let (n, m) = family[0].shape();
    let cols: Vec<ComplexVector> = family.iter().map(vec_row_major).collect();
    let stacked = ComplexMatrix::from_columns(&cols);
    let dec = svd(&stacked)?;
    let rank = numerical_rank(&stacked, tol)?;
    Ok((0..rank)
        .map(|k| linalg::unvec_row_major(dec.u.column(k).as_slice(), n, m))
        .collect())
}

/// Residuals are measured against the largest member so that members that
/// vanish up to round-off do not blow up a per-member relative measure.
fn family_scale(family: &[ComplexMatrix]) -> f64 {
    family.iter().map(frobenius).fold(0.0, f64::max)
}

fn scaled_normality(m: &ComplexMatrix, scale: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    let md = m.adjoint();
    frobenius(&(m * &md - &md * m)) / (scale * scale)
}

fn scaled_commutator(a: &ComplexMatrix, b: &ComplexMatrix, scale: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    frobenius(&(a * b - b * a)) / (scale * scale)
}

fn family_residuals(family: &[ComplexMatrix], tol: &Tolerance) -> Result<(f64, f64)> {
    let scale = family_scale(family);
    let normal = family.iter().map(|m| scaled_normality(m, scale)).fold(0.0, f64::max);
    // commutation is bilinear, so an orthonormal basis of the span suffices
    let basis = span_basis(family, tol)?;
    let mut comm: f64 = 0.0;
    for i in 0..basis.len() {
        for j in i + 1..basis.len() {
            comm = comm.max(commutator_residual(&basis[i], &basis[j]));
        }
    }
    Ok((normal, comm))
}

/// Normal-and-commuting criterion for control from `side`.
pub fn check_controlled(u: &BipartiteUnitary, side: Side, tol: &Tolerance) -> Result<ControlledVerdict> {
    let dec = side_decomposition(u, tol)?;
    let factors = dec.factors(side);
    let mut left_family = Vec::with_capacity(factors.len() * factors.len());
    let mut right_family = Vec::with_capacity(factors.len() * factors.len());
    for ai in factors {
        for aj in factors {
            left_family.push(ai * aj.adjoint());
            right_family.push(ai.adjoint() * aj);
        }
    }
    let (n1, c1) = family_residuals(&left_family, tol)?;
    let (n2, c2) = family_residuals(&right_family, tol)?;
    let max_normality_residual = n1.max(n2);
    let max_commutator_residual = c1.max(c2);
    Ok(ControlledVerdict {
        side,
        is_controlled: max_normality_residual <= tol.commute_tol && max_commutator_residual <= tol.commute_tol,
        left_family,
        right_family,
        max_normality_residual,
        max_commutator_residual,
    })
}

/// Random Hermitian combination of the Hermitian and anti-Hermitian parts
/// of a family (each member scaled to unit Frobenius norm).
fn random_hermitian_combination(family: &[ComplexMatrix], rng: &mut SeededRng) -> ComplexMatrix {
    let n = family[0].nrows();
    let mut h = ComplexMatrix::zeros(n, n);
    for m in family {
        let norm = frobenius(m);
        if norm == 0.0 {
            continue;
        }
        let md = m.adjoint();
        let herm = (m + &md).scale(0.5 / norm);
        let anti = (m - &md) * (c(0.0, -0.5) / norm);
        let a: f64 = rng.sample(rand_distr::StandardNormal);
        let b: f64 = rng.sample(rand_distr::StandardNormal);
        h += herm.scale(a) + anti.scale(b);
    }
    h
}

fn is_scalar_family(family: &[ComplexMatrix], scales: &[f64], tol: &Tolerance) -> bool {
    family.iter().zip(scales).all(|(m, &s)| {
        let k = m.nrows();
        let mean = m.trace() / c(k as f64, 0.0);
        frobenius(&(m - identity(k) * mean)) <= tol.reconstruct_tol * s.max(f64::MIN_POSITIVE)
    })
}

fn refine_joint(
    family: &[ComplexMatrix],
    scales: &[f64],
    basis: ComplexMatrix,
    tol: &Tolerance,
    rng: &mut SeededRng,
    out: &mut Vec<ComplexMatrix>,
) -> Result<()> {
    let restricted: Vec<ComplexMatrix> = family.iter().map(|m| basis.adjoint() * m * &basis).collect();
    if basis.ncols() == 1 || is_scalar_family(&restricted, scales, tol) {
        out.push(basis);
        return Ok(());
    }
    for _ in 0..MAX_ATTEMPTS {
        let h = random_hermitian_combination(&restricted, rng);
        let (vals, w) = eig_hermitian(&h, &Tolerance { commute_tol: 1e-6, ..*tol })?;
        let spread = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let clusters = cluster_sorted(&vals, tol.eig_cluster_tol, spread);
        if clusters.len() == 1 {
            continue;
        }
        for cl in clusters {
            let sub = &basis * w.columns(cl.start, cl.len());
            refine_joint(family, scales, sub, tol, rng, out)?;
        }
        return Ok(());
    }
    Err(Error::NotSimultaneouslyDiagonalizable(format!(
        "could not split a {}-dimensional joint eigenspace",
        basis.ncols()
    )))
}

/// Unitary `W` with `W^dagger M W` diagonal for every member of a commuting
/// family of normal matrices.
pub fn joint_diagonalize(family: &[ComplexMatrix], tol: &Tolerance, seed: u64) -> Result<ComplexMatrix> {
    tol.validate()?;
    let Some(first) = family.first() else {
        return Err(Error::NotSimultaneouslyDiagonalizable("empty family".into()));
    };
    let n = first.nrows();
    let scale = family_scale(family);
    for m in family {
        linalg::check_finite(m)?;
        if m.shape() != (n, n) {
            return Err(Error::ShapeError(format!("family members must all be {n}x{n}")));
        }
        let r = scaled_normality(m, scale);
        if r > tol.commute_tol {
            return Err(Error::NotSimultaneouslyDiagonalizable(format!("member is not normal ({r:.3e})")));
        }
    }
    for (i, a) in family.iter().enumerate() {
        for b in &family[i + 1..] {
            let r = scaled_commutator(a, b, scale);
            if r > tol.commute_tol {
                return Err(Error::NotSimultaneouslyDiagonalizable(format!("members do not commute ({r:.3e})")));
            }
        }
    }
    let scales = vec![scale; family.len()];
    let mut rng = rng(seed);
    let mut parts = Vec::new();
    refine_joint(family, &scales, identity(n), tol, &mut rng, &mut parts)?;
    let cols: Vec<_> = parts.iter().flat_map(|p| p.column_iter().map(|c| c.into_owned()).collect::<Vec<_>>()).collect();
    let w = ComplexMatrix::from_columns(&cols);
    for m in family {
        let d = w.adjoint() * m * &w;
        let off = off_diagonal_residual(&d) * frobenius(&d) / scale.max(f64::MIN_POSITIVE);
        if off > tol.reconstruct_tol {
            return Err(Error::NotSimultaneouslyDiagonalizable(format!("off-diagonal residual {off:.3e}")));
        }
    }
    Ok(w)
}

/// Unitaries `q`, `r` with `q^dagger a_j r^dagger` diagonal for every `a_j`.
///
/// A random complex combination of the family is decomposed first; inside
/// each cluster of equal nonzero singular values the restricted family is
/// normal and commuting and gets jointly diagonalized.
pub fn simultaneous_svd(a_ops: &[ComplexMatrix], tol: &Tolerance, seed: u64) -> Result<SimultaneousSvd> {
    tol.validate()?;
    let Some(first) = a_ops.first() else {
        return Err(Error::NoSimultaneousSvd("empty family".into()));
    };
    let d = first.nrows();
    for a in a_ops {
        linalg::check_finite(a)?;
        if a.shape() != (d, d) {
            return Err(Error::ShapeError(format!("family members must all be {d}x{d}")));
        }
    }
    let mut rng = rng(seed);
    let mut last_err = None;
    for _ in 0..MAX_ATTEMPTS {
        let mut comb = ComplexMatrix::zeros(d, d);
        for a in a_ops {
            let n = frobenius(a);
            if n > 0.0 {
                comb += a * (complex_gaussian(&mut rng) / n);
            }
        }
        match simultaneous_svd_from(a_ops, &comb, tol, &mut rng) {
            Ok(res) => return Ok(res),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::NoSimultaneousSvd("no attempt succeeded".into())))
}

fn simultaneous_svd_from(
    a_ops: &[ComplexMatrix],
    comb: &ComplexMatrix,
    tol: &Tolerance,
    rng: &mut SeededRng,
) -> Result<SimultaneousSvd> {
    let d = comb.nrows();
    let dec = svd(comb)?;
    let s_max = dec.s[0];
    if s_max == 0.0 {
        return Err(Error::NoSimultaneousSvd("family is zero".into()));
    }
    // cluster on ascending order, then map back to the descending SVD order
    let asc: Vec<f64> = dec.s.iter().rev().copied().collect();
    let clusters = cluster_sorted(&asc, tol.eig_cluster_tol, s_max);
    let mut q_cols = Vec::with_capacity(d);
    let mut r_cols = Vec::with_capacity(d);
    for cl in clusters.iter().rev() {
        let lo = d - cl.end;
        let len = cl.len();
        let uc = dec.u.columns(lo, len).into_owned();
        let vc = dec.v.columns(lo, len).into_owned();
        let w = if dec.s[lo] <= tol.rank_rel_tol * s_max || len == 1 {
            identity(len)
        } else {
            let restricted: Vec<ComplexMatrix> = a_ops.iter().map(|a| uc.adjoint() * a * &vc).collect();
            let seed: u64 = rng.random();
            joint_diagonalize(&restricted, tol, seed).map_err(|e| Error::NoSimultaneousSvd(e.to_string()))?
        };
        let qb = &uc * &w;
        let rb = &vc * &w;
        q_cols.extend(qb.column_iter().map(|c| c.into_owned()));
        r_cols.extend(rb.column_iter().map(|c| c.into_owned()));
    }
    let q = ComplexMatrix::from_columns(&q_cols);
    let r = ComplexMatrix::from_columns(&r_cols).adjoint();
    let scale = family_scale(a_ops);
    let mut diags = Vec::with_capacity(a_ops.len());
    for a in a_ops {
        let x = q.adjoint() * a * r.adjoint();
        let off = off_diagonal_residual(&x) * frobenius(&x) / scale;
        if off > tol.reconstruct_tol {
            return Err(Error::NoSimultaneousSvd(format!("off-diagonal residual {off:.3e}")));
        }
        diags.push(DVector::from_iterator(d, (0..d).map(|k| x[(k, k)])));
    }
    Ok(SimultaneousSvd { q, r, diags })
}

/// `Some(phase)` with `b = phase * a` when the two agree up to a global
/// phase within `threshold` (Frobenius).
pub fn phase_equal(a: &ComplexMatrix, b: &ComplexMatrix, threshold: f64) -> Option<num_complex::Complex64> {
    let ov = linalg::hs_inner(a, b);
    if ov.norm() == 0.0 {
        return None;
    }
    let phase = ov / ov.norm();
    (frobenius(&(b - a * phase)) <= threshold).then_some(phase)
}

/// Explicit controlled form of a unitary controlled from `side`.
pub fn extract_controlled_form(
    u: &BipartiteUnitary,
    side: Side,
    tol: &Tolerance,
    seed: u64,
) -> Result<ControlledForm> {
    let dec = side_decomposition(u, tol)?;
    let ctrl = dec.factors(side);
    let targets = dec.weighted_factors(side.other());
    let ssvd = simultaneous_svd(ctrl, tol, seed)?;
    let dc = u.dim(side);
    let dt = u.dim(side.other());

    let mut q = ssvd.q.clone();
    let mut groups: Vec<ControlGroup> = Vec::new();
    for k in 0..dc {
        let mut vk = ComplexMatrix::zeros(dt, dt);
        for (j, t) in targets.iter().enumerate() {
            vk += t * ssvd.diags[j][k];
        }
        let res = unitarity_residual(&vk);
        if res > tol.unitarity_tol {
            return Err(Error::InternalContractViolation(format!(
                "extracted block {k} is not unitary (residual {res:.3e})"
            )));
        }
        match groups
            .iter_mut()
            .find_map(|g| phase_equal(&g.v, &vk, tol.reconstruct_tol).map(|ph| (g, ph)))
        {
            Some((g, ph)) => {
                g.indices.push(k);
                for i in 0..dc {
                    q[(i, k)] *= ph;
                }
            }
            None => groups.push(ControlGroup { indices: vec![k], v: vk }),
        }
    }
    let form = ControlledForm { side, d_a: u.d_a(), d_b: u.d_b(), q, r: ssvd.r, groups };
    form.validate(tol)
        .map_err(|e| Error::InternalContractViolation(e.to_string()))?;
    let res = form.reconstruction_residual(u.matrix());
    if res > tol.reconstruct_tol {
        return Err(Error::InternalContractViolation(format!("reconstruction residual {res:.3e}")));
    }
    Ok(form)
}

/// Finest partition of one side into orthogonal blocks under which all
/// Schmidt factors of that side are simultaneously block diagonal.
///
/// Block subspaces are the eigenspaces of a generic Hermitian element of
/// the commutant of the factors: pairs `(X1, X2)` with `X1 A_j = A_j X2`
/// and `X2 A_j^dagger = A_j^dagger X1`. Returns `None` when only the trivial
/// one-block partition exists.
pub fn finest_block_structure(
    u: &BipartiteUnitary,
    side: Side,
    tol: &Tolerance,
    seed: u64,
) -> Result<Option<BlockStructure>> {
    let dec = side_decomposition(u, tol)?;
    let factors = dec.factors(side);
    let d = u.dim(side);
    if d == 1 {
        return Ok(None);
    }
    let commutant = factor_commutant(factors, d, tol)?;
    if commutant.len() <= 1 {
        return Ok(None);
    }
    let mut rng = rng(seed);
    for _ in 0..MAX_ATTEMPTS {
        if let Some(bs) = blocks_from_commutant(factors, &commutant, side, d, tol, &mut rng)? {
            return Ok(if bs.block_sizes.len() > 1 { Some(bs) } else { None });
        }
    }
    Err(Error::InternalContractViolation("block structure did not stabilize".into()))
}

/// Basis of the commutant, each element a pair `(X1, X2)`.
fn factor_commutant(
    factors: &[ComplexMatrix],
    d: usize,
    tol: &Tolerance,
) -> Result<Vec<(ComplexMatrix, ComplexMatrix)>> {
    let n_unknown = 2 * d * d;
    let n_eq = 2 * factors.len() * d * d;
    let mut lin = ComplexMatrix::zeros(n_eq, n_unknown);
    for col in 0..n_unknown {
        let (x1, x2) = unit_pair(col, d);
        let mut row = 0;
        for a in factors {
            let ad = a.adjoint();
            let e1 = &x1 * a - a * &x2;
            let e2 = &x2 * &ad - &ad * &x1;
            for z in e1.iter().chain(e2.iter()) {
                lin[(row, col)] = *z;
                row += 1;
            }
        }
    }
    let ns = linalg::null_space(&lin, tol)?;
    Ok(ns
        .column_iter()
        .map(|v| {
            let x1 = ComplexMatrix::from_column_slice(d, d, &v.as_slice()[..d * d]);
            let x2 = ComplexMatrix::from_column_slice(d, d, &v.as_slice()[d * d..]);
            (x1, x2)
        })
        .collect())
}

fn unit_pair(idx: usize, d: usize) -> (ComplexMatrix, ComplexMatrix) {
    let mut x1 = ComplexMatrix::zeros(d, d);
    let mut x2 = ComplexMatrix::zeros(d, d);
    // column-major unknown ordering matches from_column_slice above
    let (target, k) = if idx < d * d { (&mut x1, idx) } else { (&mut x2, idx - d * d) };
    target[(k % d, k / d)] = ONE;
    (x1, x2)
}

fn blocks_from_commutant(
    factors: &[ComplexMatrix],
    commutant: &[(ComplexMatrix, ComplexMatrix)],
    side: Side,
    d: usize,
    tol: &Tolerance,
    rng: &mut SeededRng,
) -> Result<Option<BlockStructure>> {
    let mut y1 = ComplexMatrix::zeros(d, d);
    let mut y2 = ComplexMatrix::zeros(d, d);
    for (x1, x2) in commutant {
        let g = complex_gaussian(rng);
        y1 += x1 * g;
        y2 += x2 * g;
    }
    let h1 = (&y1 + y1.adjoint()).scale(0.5);
    let h2 = (&y2 + y2.adjoint()).scale(0.5);
    let loose = Tolerance { commute_tol: 1e-6, ..*tol };
    let (l1, w1) = eig_hermitian(&h1, &loose)?;
    let (l2, w2) = eig_hermitian(&h2, &loose)?;

    // pool both spectra; every cluster must draw equally from both sides
    let mut pooled: Vec<(f64, usize, usize)> = l1
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, 0, i))
        .chain(l2.iter().enumerate().map(|(i, &v)| (v, 1, i)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let vals: Vec<f64> = pooled.iter().map(|p| p.0).collect();
    let spread = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let clusters = cluster_sorted(&vals, tol.eig_cluster_tol, spread);

    let mut blocks: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for cl in clusters {
        let left: Vec<usize> = pooled[cl.clone()].iter().filter(|p| p.1 == 0).map(|p| p.2).collect();
        let right: Vec<usize> = pooled[cl].iter().filter(|p| p.1 == 1).map(|p| p.2).collect();
        if left.len() != right.len() || left.is_empty() {
            return Ok(None);
        }
        blocks.push((left, right));
    }
    blocks.sort_by_key(|b| std::cmp::Reverse(b.0.len()));
    let left_cols: Vec<_> = blocks.iter().flat_map(|b| b.0.iter().map(|&i| w1.column(i).into_owned())).collect();
    let right_cols: Vec<_> = blocks.iter().flat_map(|b| b.1.iter().map(|&i| w2.column(i).into_owned())).collect();
    let bs = BlockStructure {
        side,
        w_left: ComplexMatrix::from_columns(&left_cols),
        w_right: ComplexMatrix::from_columns(&right_cols).adjoint(),
        block_sizes: blocks.iter().map(|b| b.0.len()).collect(),
    };
    for a in factors {
        if bs.off_block_residual(a) > tol.reconstruct_tol {
            return Ok(None);
        }
    }
    Ok(Some(bs))
}

fn blocks_of(m: &ComplexMatrix, d_a: usize, d_b: usize) -> Vec<Vec<ComplexMatrix>> {
    (0..d_a)
        .map(|i| (0..d_a).map(|j| m.view((i * d_b, j * d_b), (d_b, d_b)).into_owned()).collect())
        .collect()
}

/// Coefficients `c` with `sum_j c_j X_j = 0`, when the blocks are dependent.
fn dependence(blocks: &[ComplexMatrix], tol: &Tolerance) -> Result<Option<ComplexVector>> {
    let cols: Vec<ComplexVector> = blocks.iter().map(vec_row_major).collect();
    let k = ComplexMatrix::from_columns(&cols);
    if frobenius(&k) == 0.0 {
        let mut e = ComplexVector::zeros(blocks.len());
        e[0] = ONE;
        return Ok(Some(e));
    }
    let ns = linalg::null_space(&k, tol)?;
    Ok((ns.ncols() > 0).then(|| ns.column(0).into_owned()))
}

/// Local operations on A that zero one `d_B x d_B` block of an operator of
/// Schmidt rank at most `d_A`.
///
/// If some block row is linearly dependent, a column operation zeroes one
/// of its blocks. Otherwise row-1 blocks are expanded in the row-2 blocks,
/// `X_1j = sum_l C_lj X_2l`, and the pencil `x X_1j + y X_2j` with
/// `(x, y) ~ (1, -lambda)` for an eigenvalue `lambda` of `C` is dependent;
/// a row operation puts that pencil in the first row.
pub fn zero_block_reduction(m: &ComplexMatrix, d_a: usize, d_b: usize, tol: &Tolerance) -> Result<ZeroBlockReduction> {
    check_bipartite_shape(m, d_a, d_b)?;
    linalg::check_finite(m)?;
    if d_a < 2 {
        return Err(Error::UnsupportedShape("zero-block reduction needs d_A >= 2".into()));
    }
    let rank = schmidt_rank(m, d_a, d_b, tol)?;
    if rank > d_a {
        return Err(Error::RankTooHigh { rank, bound: d_a });
    }
    let norm = frobenius(m);
    let finish = |left: ComplexMatrix, right: ComplexMatrix, block: (usize, usize)| -> Result<ZeroBlockReduction> {
        let mut red = ZeroBlockReduction { left, right, block, residual: 0.0 };
        let out = red.apply(m, d_b);
        let blk = out.view((block.0 * d_b, block.1 * d_b), (d_b, d_b)).into_owned();
        red.residual = if norm == 0.0 { 0.0 } else { frobenius(&blk) / norm };
        Ok(red)
    };
    if norm == 0.0 {
        return finish(identity(d_a), identity(d_a), (0, 0));
    }

    let blocks = blocks_of(m, d_a, d_b);
    for (i, row) in blocks.iter().enumerate() {
        if let Some(coef) = dependence(row, tol)? {
            let right = linalg::unitary_with_first_column(&coef)?;
            return finish(identity(d_a), right, (i, 0));
        }
    }

    // every block row is independent, so rank == d_A and row 1 lies in span(row 2)
    let row2: Vec<ComplexVector> = blocks[1].iter().map(vec_row_major).collect();
    let k2 = ComplexMatrix::from_columns(&row2);
    let dec = svd(&k2)?;
    let mut coeffs = ComplexMatrix::zeros(d_a, d_a);
    for (j, x) in blocks[0].iter().enumerate() {
        let v = vec_row_major(x);
        // least squares through the thin SVD
        let proj = dec.u.adjoint() * &v;
        let mut sol = ComplexVector::zeros(d_a);
        for (k, &s) in dec.s.iter().enumerate() {
            sol += dec.v.column(k) * (proj[k] / s);
        }
        coeffs.set_column(j, &sol);
    }

    let mut best: Option<ZeroBlockReduction> = None;
    for lambda in linalg::eigenvalues(&coeffs)? {
        let mut first_row = ComplexVector::zeros(d_a);
        first_row[0] = ONE;
        first_row[1] = -lambda;
        // a unitary with a prescribed first row is the transpose of one with that first column
        let left = linalg::unitary_with_first_column(&first_row)?.transpose();
        let moved = kron(&left, &identity(d_b)) * m;
        let top = blocks_of(&moved, d_a, d_b).swap_remove(0);
        let coef = match dependence(&top, &Tolerance { rank_rel_tol: 1e-6, ..*tol })? {
            Some(cf) => cf,
            None => {
                // take the weakest direction of the pencil row
                let cols: Vec<ComplexVector> = top.iter().map(vec_row_major).collect();
                let d = svd(&ComplexMatrix::from_columns(&cols))?;
                d.v.column(d_a - 1).into_owned()
            }
        };
        let right = linalg::unitary_with_first_column(&coef)?;
        let cand = finish(left, right, (0, 0))?;
        if best.as_ref().is_none_or(|b| cand.residual < b.residual) {
            best = Some(cand);
        }
    }
    let best = best.ok_or_else(|| Error::InternalContractViolation("no eigenvalue found".into()))?;
    if best.residual > tol.reconstruct_tol {
        return Err(Error::InternalContractViolation(format!(
            "zeroed block has relative norm {:.3e}",
            best.residual
        )));
    }
    Ok(best)
}

/// Number of linearly independent matrices among the group unitaries.
pub fn independent_group_count(form: &ControlledForm, tol: &Tolerance) -> Result<usize> {
    let cols: Vec<ComplexVector> = form.groups.iter().map(|g| vec_row_major(&g.v)).collect();
    numerical_rank(&ComplexMatrix::from_columns(&cols), tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::instances::{random_controlled, random_low_schmidt_rank};
    use crate::linalg::{diag, pauli_x, pauli_z};
    use crate::random::{haar_unitary, random_phase};
    use proptest::prelude::*;

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    fn matches_up_to_phase(found: &[ComplexMatrix], expected: &[ComplexMatrix]) -> bool {
        let mut used = vec![false; found.len()];
        expected.iter().all(|e| {
            let hit = found
                .iter()
                .enumerate()
                .find(|(i, f)| !used[*i] && phase_equal(e, f, 1e-8).is_some())
                .map(|(i, _)| i);
            hit.map(|i| used[i] = true).is_some()
        }) && found.len() == expected.len()
    }

    #[test]
    fn fixture_verdicts() {
        let t = tol();
        let v = fixtures::v324();
        assert!(check_controlled(&v, Side::B, &t).unwrap().is_controlled);
        assert!(!check_controlled(&v, Side::A, &t).unwrap().is_controlled);
        let s = fixtures::swap();
        assert!(!check_controlled(&s, Side::A, &t).unwrap().is_controlled);
        assert!(!check_controlled(&s, Side::B, &t).unwrap().is_controlled);
        let verdict = check_controlled(&fixtures::cnot(), Side::A, &t).unwrap();
        assert!(verdict.is_controlled);
        assert_eq!(verdict.left_family.len(), 4);
        assert!(verdict.margin() < 1e-12);
    }

    #[test]
    fn joint_diagonalize_pauli_families() {
        let t = tol();
        let w = joint_diagonalize(&[pauli_z(), identity(2)], &t, 1).unwrap();
        assert!(off_diagonal_residual(&(w.adjoint() * pauli_z() * &w)) < 1e-12);
        let x = pauli_x();
        let w = joint_diagonalize(&[x.clone(), &x * &x], &t, 2).unwrap();
        let d = w.adjoint() * &x * &w;
        assert!(off_diagonal_residual(&d) < 1e-12);
        assert!((d[(0, 0)] * d[(1, 1)] + ONE).norm() < 1e-12);
    }

    #[test]
    fn joint_diagonalize_rejects_noncommuting() {
        let err = joint_diagonalize(&[pauli_x(), pauli_z()], &tol(), 0).unwrap_err();
        assert!(matches!(err, Error::NotSimultaneouslyDiagonalizable(_)));
    }

    #[test]
    fn joint_diagonalize_with_degenerate_members() {
        let mut r = rng(5);
        let w0 = haar_unitary(&mut r, 5);
        let d1 = diag(&[ONE, ONE, c(2.0, 0.0), c(2.0, 0.0), c(3.0, 0.0)]);
        let d2 = diag(&[ONE, -ONE, ONE, -ONE, ONE]);
        let fam: Vec<_> = [d1, d2].iter().map(|d| &w0 * d * w0.adjoint()).collect();
        let w = joint_diagonalize(&fam, &tol(), 9).unwrap();
        for m in &fam {
            assert!(off_diagonal_residual(&(w.adjoint() * m * &w)) <= 1e-9);
        }
    }

    #[test]
    fn simultaneous_svd_identity_and_z() {
        let s = simultaneous_svd(&[identity(2), pauli_z()], &tol(), 3).unwrap();
        let mut prods: Vec<f64> = (0..2).map(|k| (s.diags[1][k] / s.diags[0][k]).re).collect();
        prods.sort_by(f64::total_cmp);
        assert!((prods[0] + 1.0).abs() < 1e-12 && (prods[1] - 1.0).abs() < 1e-12);
        for k in 0..2 {
            assert!((s.diags[0][k].norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn simultaneous_svd_rejects_swap_factors() {
        let dec = schmidt_decompose(fixtures::swap().matrix(), 2, 2, &tol()).unwrap();
        assert!(simultaneous_svd(dec.factors(Side::A), &tol(), 0).is_err());
    }

    #[test]
    fn extract_cnot_and_v324() {
        let t = tol();
        let f = extract_controlled_form(&fixtures::cnot(), Side::A, &t, 0).unwrap();
        let vs: Vec<_> = f.groups.iter().map(|g| g.v.clone()).collect();
        assert!(matches_up_to_phase(&vs, &[identity(2), pauli_x()]));
        assert!(f.reconstruction_residual(fixtures::cnot().matrix()) <= 1e-9);

        let u = fixtures::v324();
        let f = extract_controlled_form(&u, Side::B, &t, 0).unwrap();
        let h = (pauli_x() + pauli_z()).scale(std::f64::consts::FRAC_1_SQRT_2);
        let vs: Vec<_> = f.groups.iter().map(|g| g.v.clone()).collect();
        assert!(matches_up_to_phase(&vs, &[identity(2), pauli_x(), pauli_z(), h]));
        assert_eq!(independent_group_count(&f, &t).unwrap(), 3);
        assert!(extract_controlled_form(&u, Side::A, &t, 0).is_err());
    }

    #[test]
    fn block_structures_of_fixtures() {
        let t = tol();
        let bs = finest_block_structure(&fixtures::bcu_qutrit_qubit(), Side::A, &t, 0).unwrap().unwrap();
        assert_eq!(bs.block_sizes, vec![2, 1]);
        assert!(finest_block_structure(&fixtures::swap(), Side::A, &t, 0).unwrap().is_none());
        let bs = finest_block_structure(&fixtures::cnot(), Side::A, &t, 0).unwrap().unwrap();
        assert_eq!(bs.block_sizes, vec![1, 1]);
        let dec = schmidt_decompose(fixtures::bcu_qutrit_qubit().matrix(), 3, 2, &t).unwrap();
        for a in dec.factors(Side::A) {
            assert!(bs_residual_ok(&finest_block_structure(&fixtures::bcu_qutrit_qubit(), Side::A, &t, 1).unwrap().unwrap(), a));
        }
    }

    fn bs_residual_ok(bs: &BlockStructure, a: &ComplexMatrix) -> bool {
        bs.off_block_residual(a) <= 1e-9
    }

    #[test]
    fn zero_block_on_dependent_row() {
        // first block row of a CNOT-like operator with a zero block already present
        let m = kron(&crate::linalg::basis_projector(2, 0), &identity(3));
        let red = zero_block_reduction(&m, 2, 3, &tol()).unwrap();
        assert!(red.residual <= 1e-12);
    }

    #[test]
    fn zero_block_rejects_high_rank() {
        let mut r = rng(1);
        let m = random_low_schmidt_rank(&mut r, 2, 3, 4);
        assert!(matches!(zero_block_reduction(&m, 2, 3, &tol()), Err(Error::RankTooHigh { rank: 4, bound: 2 })));
    }

    fn block_norm(m: &ComplexMatrix, d_b: usize, (i, j): (usize, usize)) -> f64 {
        frobenius(&m.view((i * d_b, j * d_b), (d_b, d_b)).into_owned())
    }

    #[test]
    fn zero_block_random_operators() {
        for (seed, d_a, d_b, rank) in [(1, 2, 3, 2), (2, 3, 4, 3), (3, 4, 2, 4), (4, 3, 5, 2)] {
            let mut r = rng(seed);
            let m = random_low_schmidt_rank(&mut r, d_a, d_b, rank);
            let red = zero_block_reduction(&m, d_a, d_b, &tol()).unwrap();
            let out = red.apply(&m, d_b);
            // oracle: independent block read-out and the unitarity of both factors
            assert!(block_norm(&out, d_b, red.block) <= 1e-9 * frobenius(&m));
            assert!(unitarity_residual(&red.left) < 1e-12 && unitarity_residual(&red.right) < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn extraction_round_trip(seed in 0u64..10_000, side_a in any::<bool>(), groups in 1usize..=4, extra in 0usize..2, d_tgt in 2usize..=4) {
            let side = if side_a { Side::A } else { Side::B };
            let mut r = rng(seed);
            let inst = random_controlled(&mut r, side, groups + extra, d_tgt, groups);
            let t = tol();
            let verdict = check_controlled(&inst.unitary, side, &t).unwrap();
            prop_assert!(verdict.is_controlled);
            let f = extract_controlled_form(&inst.unitary, side, &t, seed).unwrap();
            prop_assert_eq!(f.group_count(), groups);
            let vs: Vec<_> = f.groups.iter().map(|g| g.v.clone()).collect();
            prop_assert!(matches_up_to_phase(&vs, &inst.group_unitaries));
            prop_assert!(f.reconstruction_residual(inst.unitary.matrix()) <= 1e-9);
            let mut sizes: Vec<_> = f.groups.iter().map(|g| g.indices.len()).collect();
            let mut want = inst.group_sizes.clone();
            sizes.sort();
            want.sort();
            prop_assert_eq!(sizes, want);
        }

        #[test]
        fn verdict_is_local_unitary_invariant(seed in 0u64..10_000) {
            let t = tol();
            for fx in fixtures::all() {
                let u = fx.build();
                let mut r = rng(seed);
                let w: Vec<_> = [u.d_a(), u.d_b(), u.d_a(), u.d_b()].iter().map(|&d| haar_unitary(&mut r, d)).collect();
                let moved = u.conjugate_local((&w[0], &w[1]), (&w[2], &w[3]), &t).unwrap();
                for side in [Side::A, Side::B] {
                    prop_assert_eq!(
                        check_controlled(&u, side, &t).unwrap().is_controlled,
                        check_controlled(&moved, side, &t).unwrap().is_controlled
                    );
                }
            }
        }

        #[test]
        fn joint_diagonalize_round_trip(seed in 0u64..10_000, n in 2usize..=5, k in 1usize..=4) {
            let mut r = rng(seed);
            let w0 = haar_unitary(&mut r, n);
            let fam: Vec<_> = (0..k).map(|_| {
                let d: Vec<_> = (0..n).map(|_| random_phase(&mut r) * c(1.0 + 2.0 * crate::random::real_gaussian_vec(&mut r, 1)[0].abs(), 0.0)).collect();
                &w0 * diag(&d) * w0.adjoint()
            }).collect();
            let w = joint_diagonalize(&fam, &tol(), seed).unwrap();
            for m in &fam {
                prop_assert!(off_diagonal_residual(&(w.adjoint() * m * &w)) <= 1e-9);
            }
        }

        #[test]
        fn simultaneous_svd_round_trip(seed in 0u64..10_000, n in 2usize..=5, k in 1usize..=4) {
            let mut r = rng(seed);
            let q0 = haar_unitary(&mut r, n);
            let r0 = haar_unitary(&mut r, n);
            let seeds: Vec<Vec<_>> = (0..k).map(|_| (0..n).map(|_| crate::random::complex_gaussian(&mut r)).collect()).collect();
            let fam: Vec<_> = seeds.iter().map(|d| &q0 * diag(d) * &r0).collect();
            let s = simultaneous_svd(&fam, &tol(), seed).unwrap();
            for (a, dg) in fam.iter().zip(&s.diags) {
                let x = s.q.adjoint() * a * s.r.adjoint();
                prop_assert!(off_diagonal_residual(&x) <= 1e-9);
                // oracle: moduli agree with the seeds up to a common permutation
                let mut got: Vec<f64> = dg.iter().map(|z| z.norm()).collect();
                got.sort_by(f64::total_cmp);
                prop_assert!(got.len() == n);
            }
            // permutation recovered jointly: each recovered column matches one seed column up to phase
            for col in 0..n {
                let found: Vec<_> = s.diags.iter().map(|d| d[col]).collect();
                let hit = (0..n).any(|j| {
                    let want: Vec<_> = seeds.iter().map(|d| d[j]).collect();
                    let ov: num_complex::Complex64 = want.iter().zip(&found).map(|(w, f)| w.conj() * f).sum();
                    let nw: f64 = want.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                    let nf: f64 = found.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                    (ov.norm() - nw * nf).abs() <= 1e-8 * nw.max(1.0) && (nw - nf).abs() <= 1e-8 * nw.max(1.0)
                });
                prop_assert!(hit);
            }
        }

        #[test]
        fn criterion_matches_extraction(seed in 0u64..10_000, d_a in 2usize..=3, d_b in 2usize..=3) {
            let mut r = rng(seed);
            let u = BipartiteUnitary::new(d_a, d_b, haar_unitary(&mut r, d_a * d_b), &tol()).unwrap();
            for side in [Side::A, Side::B] {
                let v = check_controlled(&u, side, &tol()).unwrap();
                prop_assert_eq!(v.is_controlled, extract_controlled_form(&u, side, &tol(), seed).is_ok());
            }
        }
    }
}
