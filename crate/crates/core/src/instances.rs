//! Seeded generators of structured random unitaries used by the property
//! suites and the CLI's random probes.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::linalg::{c, identity, kron, pauli_x, pauli_z, ComplexMatrix, Tolerance, ONE};
use crate::random::{haar_unitary, random_phase, SeededRng};
use crate::schmidt::{schmidt_rank, BipartiteUnitary, Side};

/// A controlled unitary together with the data it was built from.
#[derive(Debug, Clone)]
pub struct ControlledInstance {
    pub unitary: BipartiteUnitary,
    pub side: Side,
    /// Number of control indices assigned to each group.
    pub group_sizes: Vec<usize>,
    /// Group unitaries expressed in the frame of the final operator, i.e.
    /// with the target-side local unitaries already applied.
    pub group_unitaries: Vec<ComplexMatrix>,
}

fn assemble(side: Side, proj_terms: &[(ComplexMatrix, ComplexMatrix)]) -> ComplexMatrix {
    proj_terms
        .iter()
        .map(|(p, v)| match side {
            Side::A => kron(p, v),
            Side::B => kron(v, p),
        })
        .reduce(|a, b| a + b)
        .expect("at least one term")
}

fn local(side: Side, ctrl: &ComplexMatrix, tgt: &ComplexMatrix) -> ComplexMatrix {
    match side {
        Side::A => kron(ctrl, tgt),
        Side::B => kron(tgt, ctrl),
    }
}

/// `(W1 (x) W2) (sum_g P_g (x) V_g) (W3 (x) W4)` with Haar `V_g` and a random
/// partition of the control basis into `groups` nonempty parts.
pub fn random_controlled(
    rng: &mut SeededRng,
    side: Side,
    d_ctrl: usize,
    d_tgt: usize,
    groups: usize,
) -> ControlledInstance {
    assert!(groups >= 1 && groups <= d_ctrl, "need 1 <= groups <= d_ctrl");
    let mut owner: Vec<usize> = (0..d_ctrl).map(|k| if k < groups { k } else { rng.random_range(0..groups) }).collect();
    owner.shuffle(rng);
    let vs: Vec<ComplexMatrix> = (0..groups).map(|_| haar_unitary(rng, d_tgt)).collect();
    let terms: Vec<_> = (0..groups)
        .map(|g| {
            let mut p = ComplexMatrix::zeros(d_ctrl, d_ctrl);
            for (k, &o) in owner.iter().enumerate() {
                if o == g {
                    p[(k, k)] = ONE;
                }
            }
            (p, vs[g].clone())
        })
        .collect();
    let core = assemble(side, &terms);
    let (w1, w2, w3, w4) = (
        haar_unitary(rng, d_ctrl),
        haar_unitary(rng, d_tgt),
        haar_unitary(rng, d_ctrl),
        haar_unitary(rng, d_tgt),
    );
    let m = local(side, &w1, &w2) * core * local(side, &w3, &w4);
    let (d_a, d_b) = match side {
        Side::A => (d_ctrl, d_tgt),
        Side::B => (d_tgt, d_ctrl),
    };
    let unitary = BipartiteUnitary::new(d_a, d_b, m, &Tolerance::default()).expect("product of unitaries");
    ControlledInstance {
        unitary,
        side,
        group_sizes: (0..groups).map(|g| owner.iter().filter(|&&o| o == g).count()).collect(),
        group_unitaries: vs.iter().map(|v| &w2 * v * &w4).collect(),
    }
}

/// Unitary in the span of `{I, X, Z}`: `e^{i phi} (a I + i b X + i c Z)` with
/// `(a, b, c)` a random real unit vector.
fn qubit_span_unitary(rng: &mut SeededRng) -> ComplexMatrix {
    let v: Vec<f64> = crate::random::real_gaussian_vec(rng, 3);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (a, b, cc) = (v[0] / n, v[1] / n, v[2] / n);
    (identity(2) * c(a, 0.0) + pauli_x() * c(0.0, b) + pauli_z() * c(0.0, cc)) * random_phase(rng)
}

/// Unitary `H diag(phases) H^dagger` from the 3-dimensional span of operators
/// diagonal in the fixed basis `h`.
fn commuting_span_unitary(rng: &mut SeededRng, h: &ComplexMatrix) -> ComplexMatrix {
    let d = h.nrows();
    let mut diag = ComplexMatrix::zeros(d, d);
    for k in 0..d {
        diag[(k, k)] = random_phase(rng);
    }
    h * diag * h.adjoint()
}

/// Random Schmidt-rank-3 unitary on `d_a x d_b` with `d_a` in {2, 3} and
/// `d_b >= 3`, conjugated by random local unitaries.
///
/// For `d_a = 2` every instance is `sum_k U_k (x) |k><k|` with `U_k` from a
/// fixed 3-dimensional span. For `d_a = 3` the family alternates between
/// that B-controlled construction (with a commuting span) and a
/// three-term A-controlled one.
pub fn random_schmidt_rank3(rng: &mut SeededRng, d_a: usize, d_b: usize) -> BipartiteUnitary {
    assert!((2..=3).contains(&d_a) && d_b >= 3, "needs d_a in 2..=3 and d_b >= 3");
    let tol = Tolerance::default();
    loop {
        let core = if d_a == 2 {
            let terms: Vec<_> = (0..d_b)
                .map(|k| (crate::linalg::basis_projector(d_b, k), qubit_span_unitary(rng)))
                .collect();
            assemble(Side::B, &terms)
        } else if rng.random_bool(0.5) {
            let h = haar_unitary(rng, 3);
            let terms: Vec<_> = (0..d_b)
                .map(|k| (crate::linalg::basis_projector(d_b, k), commuting_span_unitary(rng, &h)))
                .collect();
            assemble(Side::B, &terms)
        } else {
            let terms: Vec<_> = (0..3)
                .map(|k| (crate::linalg::basis_projector(3, k), haar_unitary(rng, d_b)))
                .collect();
            assemble(Side::A, &terms)
        };
        let m = kron(&haar_unitary(rng, d_a), &haar_unitary(rng, d_b))
            * core
            * kron(&haar_unitary(rng, d_a), &haar_unitary(rng, d_b));
        if schmidt_rank(&m, d_a, d_b, &tol).ok() == Some(3) {
            return BipartiteUnitary::new(d_a, d_b, m, &tol).expect("product of unitaries");
        }
    }
}

/// Random operator of Schmidt rank at most `rank` (not unitary).
pub fn random_low_schmidt_rank(rng: &mut SeededRng, d_a: usize, d_b: usize, rank: usize) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(d_a * d_b, d_a * d_b);
    for _ in 0..rank {
        m += kron(
            &crate::random::gaussian_matrix(rng, d_a, d_a),
            &crate::random::gaussian_matrix(rng, d_b, d_b),
        );
    }
    m
}
