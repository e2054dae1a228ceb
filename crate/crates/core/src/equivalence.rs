//! Stochastic-local equivalence reduced to local-unitary equivalence.
//!
//! If `U = (S_1 (x) ... (x) S_p) V (T_1 (x) ... (x) T_p)` with invertible
//! `S_i`, `T_i` and unitary `U`, `V`, then with SVDs `S_i = E_i C_i F_i` and
//! `T_i = G_i D_i H_i` the unitaries `Q_i = E_i F_i`, `R_i = G_i H_i` satisfy
//! `U = (Q_1 (x) ... ) V (R_1 (x) ... )`.

use rand::Rng;

use crate::controlled::{phase_equal, ControlGroup, ControlledForm};
use crate::error::{Error, Result};
use crate::linalg::{
    self, frobenius, identity, kron, kron_all, spectral_norm, svd, unitarity_residual, ComplexMatrix,
    ComplexVector, Tolerance,
};
use crate::random::{haar_unitary, SeededRng};
use crate::schmidt::{BipartiteUnitary, Side};

/// Condition number above which a witness operator counts as singular.
pub const MAX_CONDITION: f64 = 1e8;

/// Invertible local operators with `U = (s_1 (x) ...) V (t_1 (x) ...)`.
#[derive(Debug, Clone)]
pub struct SLWitness {
    pub s_ops: Vec<ComplexMatrix>,
    pub t_ops: Vec<ComplexMatrix>,
}

impl SLWitness {
    pub fn parties(&self) -> usize {
        self.s_ops.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.s_ops.iter().map(|s| s.nrows()).collect()
    }

    /// `(s_1 (x) ...) V (t_1 (x) ...)`.
    pub fn apply(&self, v: &ComplexMatrix) -> ComplexMatrix {
        kron_all(&self.s_ops) * v * kron_all(&self.t_ops)
    }

    fn validate(&self) -> Result<()> {
        if self.s_ops.is_empty() || self.s_ops.len() != self.t_ops.len() {
            return Err(Error::ShapeError("witness needs one s and one t operator per party".into()));
        }
        for (i, (s, t)) in self.s_ops.iter().zip(&self.t_ops).enumerate() {
            if !s.is_square() || s.shape() != t.shape() {
                return Err(Error::ShapeError(format!("party {i}: s and t must be square of equal size")));
            }
            for op in [s, t] {
                linalg::check_finite(op)?;
                let d = svd(op)?;
                let s_min = *d.s.last().expect("nonempty");
                if s_min == 0.0 || d.s[0] / s_min > MAX_CONDITION {
                    return Err(Error::NotInvertible(format!(
                        "party {i}: condition number {:.3e} exceeds {MAX_CONDITION:.0e}",
                        d.s[0] / s_min
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Local unitaries with `U = (q_1 (x) ...) V (r_1 (x) ...)`.
#[derive(Debug, Clone)]
pub struct LocalEquivalenceWitness {
    pub q_ops: Vec<ComplexMatrix>,
    pub r_ops: Vec<ComplexMatrix>,
    /// `|U - (q (x) ...) V (r (x) ...)|_F`.
    pub residual: f64,
    /// `|U' - V'|_F` for the rotated pair `U' = E^dagger U H^dagger`, `V' = F V G`.
    pub internal_residual: f64,
}

impl LocalEquivalenceWitness {
    pub fn apply(&self, v: &ComplexMatrix) -> ComplexMatrix {
        kron_all(&self.q_ops) * v * kron_all(&self.r_ops)
    }
}

fn is_exact_identity(m: &ComplexMatrix) -> bool {
    m.is_square() && *m == identity(m.nrows())
}

fn check_total_unitary(m: &ComplexMatrix, dim: usize, tol: &Tolerance, what: &str) -> Result<()> {
    linalg::check_finite(m)?;
    if m.shape() != (dim, dim) {
        return Err(Error::ShapeError(format!("{what} must be {dim}x{dim}, got {}x{}", m.nrows(), m.ncols())));
    }
    let res = unitarity_residual(m);
    if res > tol.unitarity_tol {
        return Err(Error::NotUnitary(res));
    }
    Ok(())
}

/// Residual threshold for a witness: round-off of the product grows with
/// the dimension and the operator norms of the witness.
fn witness_threshold(w: &SLWitness, dim: usize, tol: &Tolerance) -> f64 {
    let norms: f64 = w.s_ops.iter().chain(&w.t_ops).map(spectral_norm).product();
    tol.reconstruct_tol * (dim as f64).sqrt() * norms.max(1.0)
}

/// Canonicalizes a stochastic-local witness into local unitaries.
pub fn sl_to_lu(u: &ComplexMatrix, v: &ComplexMatrix, w: &SLWitness, tol: &Tolerance) -> Result<LocalEquivalenceWitness> {
    tol.validate()?;
    w.validate()?;
    let dim: usize = w.dims().iter().product();
    check_total_unitary(u, dim, tol, "U")?;
    check_total_unitary(v, dim, tol, "V")?;
    let residual = frobenius(&(u - w.apply(v)));
    let threshold = witness_threshold(w, dim, tol);
    if residual > threshold {
        return Err(Error::WitnessResidualTooLarge { residual, threshold });
    }

    let mut e_ops = Vec::new();
    let mut f_ops = Vec::new();
    let mut g_ops = Vec::new();
    let mut h_ops = Vec::new();
    for (s, t) in w.s_ops.iter().zip(&w.t_ops) {
        let n = s.nrows();
        let (e, f) = if is_exact_identity(s) {
            (identity(n), identity(n))
        } else {
            let d = svd(s)?;
            (d.u, d.v.adjoint())
        };
        let (g, h) = if is_exact_identity(t) {
            (identity(n), identity(n))
        } else {
            let d = svd(t)?;
            (d.u, d.v.adjoint())
        };
        e_ops.push(e);
        f_ops.push(f);
        g_ops.push(g);
        h_ops.push(h);
    }

    let e_dag: Vec<_> = e_ops.iter().map(|e| e.adjoint()).collect();
    let h_dag: Vec<_> = h_ops.iter().map(|h| h.adjoint()).collect();
    let u_rot = kron_all(&e_dag) * u * kron_all(&h_dag);
    let v_rot = kron_all(&f_ops) * v * kron_all(&g_ops);
    let internal_residual = frobenius(&(u_rot - v_rot));

    let q_ops: Vec<_> = e_ops.iter().zip(&f_ops).map(|(e, f)| e * f).collect();
    let r_ops: Vec<_> = g_ops.iter().zip(&h_ops).map(|(g, h)| g * h).collect();
    let mut out = LocalEquivalenceWitness { q_ops, r_ops, residual: 0.0, internal_residual };
    out.residual = frobenius(&(u - out.apply(v)));
    let bound = tol.reconstruct_tol * (dim as f64).sqrt();
    if out.residual > bound {
        return Err(Error::InternalContractViolation(format!(
            "local-unitary residual {:.3e} exceeds {bound:.3e}",
            out.residual
        )));
    }
    Ok(out)
}

fn check_projectors(projectors: &[ComplexMatrix], d: usize, tol: &Tolerance) -> Result<()> {
    for (i, p) in projectors.iter().enumerate() {
        if p.shape() != (d, d) {
            return Err(Error::ShapeError(format!("projector {i} must be {d}x{d}")));
        }
        let idem = frobenius(&(p * p - p));
        let herm = frobenius(&(p - p.adjoint()));
        if idem > tol.reconstruct_tol * (d as f64).sqrt() || herm > tol.reconstruct_tol * (d as f64).sqrt() {
            return Err(Error::InvalidMatrix(format!("operator {i} is not an orthogonal projector")));
        }
        for (j, pj) in projectors.iter().enumerate().skip(i + 1) {
            if frobenius(&(p * pj)) > tol.reconstruct_tol * (d as f64).sqrt() {
                return Err(Error::InvalidMatrix(format!("projectors {i} and {j} are not orthogonal")));
            }
        }
    }
    Ok(())
}

/// Controlled form from the A side for a unitary stochastic-locally
/// equivalent to `sum_j R_j (x) V_j` with `P_j R_j P_j = R_j`.
///
/// Every `R_j` is split by its SVD into rank-one terms `|alpha_n><beta_n|`.
/// Unitarity of `U` forces the matching `B` operators to be proportional to
/// unitaries, which reduces the instance to a controlled unitary up to an
/// A-side witness. The reduction is deterministic; the seed is accepted so
/// every structural entry point shares one signature.
pub fn controlled_from_sl_witness(
    u: &BipartiteUnitary,
    v_terms: &[(ComplexMatrix, ComplexMatrix)],
    projectors: &[ComplexMatrix],
    w: &SLWitness,
    tol: &Tolerance,
    _seed: u64,
) -> Result<ControlledForm> {
    tol.validate()?;
    let (d_a, d_b) = (u.d_a(), u.d_b());
    if w.parties() != 2 || w.dims() != [d_a, d_b] {
        return Err(Error::ShapeError(format!("witness must act on {d_a}x{d_b}")));
    }
    if v_terms.is_empty() || v_terms.len() != projectors.len() {
        return Err(Error::ShapeError("one projector per term is required".into()));
    }
    w.validate()?;
    check_projectors(projectors, d_a, tol)?;
    for (j, ((r, v), p)) in v_terms.iter().zip(projectors).enumerate() {
        if r.shape() != (d_a, d_a) || v.shape() != (d_b, d_b) {
            return Err(Error::ShapeError(format!("term {j} has the wrong shape")));
        }
        linalg::check_finite(r)?;
        linalg::check_finite(v)?;
        let nr = frobenius(r);
        if frobenius(&(p * r * p - r)) > tol.reconstruct_tol * nr.max(1.0) {
            return Err(Error::BadBlockSupport(j));
        }
    }

    let middle = v_terms.iter().map(|(r, v)| kron(r, v)).fold(ComplexMatrix::zeros(d_a * d_b, d_a * d_b), |a, b| a + b);
    let residual = frobenius(&(u.matrix() - w.apply(&middle)));
    let threshold = witness_threshold(w, d_a * d_b, tol);
    if residual > threshold {
        return Err(Error::WitnessResidualTooLarge { residual, threshold });
    }

    // rank-one split of every R_j
    let (s1, s2) = (&w.s_ops[0], &w.s_ops[1]);
    let (t1, t2) = (&w.t_ops[0], &w.t_ops[1]);
    let mut alphas: Vec<ComplexVector> = Vec::new();
    let mut betas: Vec<ComplexVector> = Vec::new();
    let mut blocks: Vec<ComplexMatrix> = Vec::new();
    let r_scale = v_terms.iter().map(|(r, _)| frobenius(r)).fold(0.0, f64::max);
    for (r, v) in v_terms {
        let d = svd(r)?;
        for (n, &sigma) in d.s.iter().enumerate() {
            if sigma <= tol.rank_rel_tol * r_scale {
                break;
            }
            alphas.push(d.u.column(n).into_owned());
            betas.push(d.v.column(n).into_owned());
            blocks.push((s2 * v * t2).scale(sigma));
        }
    }
    if alphas.len() != d_a {
        return Err(Error::InternalContractViolation(format!(
            "a unitary needs {d_a} rank-one control terms, found {}",
            alphas.len()
        )));
    }

    let mut weights = Vec::with_capacity(d_a);
    let mut unit_blocks = Vec::with_capacity(d_a);
    for (n, b) in blocks.iter().enumerate() {
        let wn = frobenius(b) / (d_b as f64).sqrt();
        let hat = b.unscale(wn);
        let res = unitarity_residual(&hat);
        if res > tol.unitarity_tol * 1e3 {
            return Err(Error::InternalContractViolation(format!(
                "control term {n} is not proportional to a unitary (residual {res:.3e})"
            )));
        }
        weights.push(wn);
        unit_blocks.push(hat);
    }

    let a_mat = ComplexMatrix::from_columns(&alphas);
    let b_mat = ComplexMatrix::from_columns(&betas);
    let s_new = s1 * &a_mat * linalg::diag_real(&weights);
    let t_new = b_mat.adjoint() * t1;
    let mut core = ComplexMatrix::zeros(d_a * d_b, d_a * d_b);
    for (n, hat) in unit_blocks.iter().enumerate() {
        core += kron(&linalg::basis_projector(d_a, n), hat);
    }
    let reduced = SLWitness { s_ops: vec![s_new, identity(d_b)], t_ops: vec![t_new, identity(d_b)] };
    let lu = sl_to_lu(u.matrix(), &core, &reduced, tol)?;

    // rank-one terms of the same R_j share their unitary; merge up to phase
    let mut q = lu.q_ops[0].clone();
    let mut groups: Vec<ControlGroup> = Vec::new();
    for (n, hat) in unit_blocks.into_iter().enumerate() {
        match groups
            .iter_mut()
            .find_map(|g| phase_equal(&g.v, &hat, tol.reconstruct_tol * 1e2).map(|ph| (g, ph)))
        {
            Some((g, ph)) => {
                g.indices.push(n);
                for i in 0..d_a {
                    q[(i, n)] *= ph;
                }
            }
            None => groups.push(ControlGroup { indices: vec![n], v: hat }),
        }
    }
    let form = ControlledForm { side: Side::A, d_a, d_b, q, r: lu.r_ops[0].clone(), groups };
    form.validate(&Tolerance { unitarity_tol: tol.unitarity_tol * 1e3, ..*tol })?;
    let res = form.reconstruction_residual(u.matrix());
    if res > tol.reconstruct_tol * ((d_a * d_b) as f64).sqrt() {
        return Err(Error::InternalContractViolation(format!("reconstruction residual {res:.3e}")));
    }
    Ok(form)
}

/// Instance of the shift construction: `V0 = sum_j |j+1><j| (x) W_j` on the
/// first party is invariant under `diag(lambda) (x) I` on the left and
/// `diag(lambda') (x) I` on the right whenever `lambda_{j+1} lambda'_j = 1`.
#[derive(Debug, Clone)]
pub struct ShiftInstance {
    pub dims: Vec<usize>,
    pub u: ComplexMatrix,
    pub v: ComplexMatrix,
    pub witness: SLWitness,
}

/// Builds `U`, `V` and a genuinely non-unitary witness between them. With
/// `identity_tail` every party but the first gets identity witness operators.
pub fn shift_instance(rng: &mut SeededRng, dims: &[usize], identity_tail: bool) -> ShiftInstance {
    assert!(dims.len() >= 2 && dims.iter().all(|&d| d >= 1));
    let d0 = dims[0];
    let rest: usize = dims[1..].iter().product();
    let mut v0 = ComplexMatrix::zeros(d0 * rest, d0 * rest);
    for j in 0..d0 {
        let mut shift = ComplexMatrix::zeros(d0, d0);
        shift[((j + 1) % d0, j)] = linalg::ONE;
        v0 += kron(&shift, &haar_unitary(rng, rest));
    }
    let lambda: Vec<f64> = (0..d0).map(|_| rng.random_range(-1.5f64..1.5).exp()).collect();
    let lambda_r: Vec<f64> = (0..d0).map(|j| 1.0 / lambda[(j + 1) % d0]).collect();

    let xs: Vec<_> = dims.iter().map(|&d| haar_unitary(rng, d)).collect();
    let ys: Vec<_> = dims.iter().map(|&d| haar_unitary(rng, d)).collect();
    let ps: Vec<_> = dims
        .iter()
        .enumerate()
        .map(|(i, &d)| if identity_tail && i > 0 { xs[i].clone() } else { haar_unitary(rng, d) })
        .collect();
    let qs: Vec<_> = dims
        .iter()
        .enumerate()
        .map(|(i, &d)| if identity_tail && i > 0 { ys[i].clone() } else { haar_unitary(rng, d) })
        .collect();
    let v = kron_all(&xs) * &v0 * kron_all(&ys);
    let u = kron_all(&ps) * &v0 * kron_all(&qs);
    let mut s_ops = Vec::new();
    let mut t_ops = Vec::new();
    for i in 0..dims.len() {
        let (ls, lt) = if i == 0 {
            (linalg::diag_real(&lambda), linalg::diag_real(&lambda_r))
        } else {
            (identity(dims[i]), identity(dims[i]))
        };
        if identity_tail && i > 0 {
            s_ops.push(identity(dims[i]));
            t_ops.push(identity(dims[i]));
        } else {
            s_ops.push(&ps[i] * ls * xs[i].adjoint());
            t_ops.push(ys[i].adjoint() * lt * &qs[i]);
        }
    }
    ShiftInstance { dims: dims.to_vec(), u, v, witness: SLWitness { s_ops, t_ops } }
}
