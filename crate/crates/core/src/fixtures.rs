//! Gallery of worked examples with their known structural facts.

use crate::linalg::{basis_projector, c, direct_sum, identity, kron, pauli_x, pauli_y, pauli_z, ComplexMatrix, Tolerance};
use crate::linalg::ComplexVector;
use crate::protocol::{maximally_entangled_on, PureState};
use crate::schmidt::BipartiteUnitary;

/// Structural facts every fixture is checked against.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedFacts {
    pub schmidt_rank: usize,
    /// Group count when controlled from A, `None` when not controlled from A.
    pub groups_a: Option<usize>,
    pub groups_b: Option<usize>,
    /// Finest block sizes (descending) on each side, `None` for the trivial partition.
    pub blocks_a: Option<Vec<usize>>,
    pub blocks_b: Option<Vec<usize>>,
    /// Rank of the B-side partial transpose.
    pub partial_transpose_rank: usize,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: &'static str,
    pub description: &'static str,
    pub d_a: usize,
    pub d_b: usize,
    pub builder: fn() -> BipartiteUnitary,
    pub expected: ExpectedFacts,
}

impl Fixture {
    pub fn build(&self) -> BipartiteUnitary {
        (self.builder)()
    }
}

fn unitary(d_a: usize, d_b: usize, m: ComplexMatrix) -> BipartiteUnitary {
    BipartiteUnitary::new(d_a, d_b, m, &Tolerance::default()).expect("fixture must be unitary")
}

pub fn identity_2x2() -> BipartiteUnitary {
    unitary(2, 2, identity(4))
}

pub fn swap() -> BipartiteUnitary {
    let mut m = ComplexMatrix::zeros(4, 4);
    for i in 0..2 {
        for k in 0..2 {
            m[(k * 2 + i, i * 2 + k)] = c(1.0, 0.0);
        }
    }
    unitary(2, 2, m)
}

pub fn cnot() -> BipartiteUnitary {
    let m = kron(&basis_projector(2, 0), &identity(2)) + kron(&basis_projector(2, 1), &pauli_x());
    unitary(2, 2, m)
}

/// `I (x) P1 + X (x) P2 + Z (x) P3 + (X + Z)/sqrt2 (x) P4` on 2x4.
pub fn v324() -> BipartiteUnitary {
    let h = (pauli_x() + pauli_z()).scale(std::f64::consts::FRAC_1_SQRT_2);
    let terms = [identity(2), pauli_x(), pauli_z(), h];
    let mut m = ComplexMatrix::zeros(8, 8);
    for (k, t) in terms.iter().enumerate() {
        m += kron(t, &basis_projector(4, k));
    }
    unitary(2, 4, m)
}

/// Qubit SWAP on the span of `|1>,|2>` of a qutrit, direct sum with
/// `|3><3| (x) I` on the remaining level.
pub fn bcu_qutrit_qubit() -> BipartiteUnitary {
    let embed = |p: ComplexMatrix| direct_sum(&p, &ComplexMatrix::zeros(1, 1));
    let mut m = kron(&embed(identity(2)), &identity(2))
        + kron(&embed(pauli_x()), &pauli_x())
        + kron(&embed(pauli_y()), &pauli_y())
        + kron(&embed(pauli_z()), &pauli_z());
    m = m.scale(0.5);
    m += kron(&basis_projector(3, 2), &identity(2));
    unitary(3, 2, m)
}

/// `sum_i V_i (x) |i><i|` on 3x3 with `V_i = U_i (+) |3><3|` and
/// `U = (I, X, Z)` on the first two levels.
pub fn three_by_three() -> BipartiteUnitary {
    let us = [identity(2), pauli_x(), pauli_z()];
    let one = identity(1);
    let mut m = ComplexMatrix::zeros(9, 9);
    for (i, u) in us.iter().enumerate() {
        m += kron(&direct_sum(u, &one), &basis_projector(3, i));
    }
    unitary(3, 3, m)
}

/// `I (x) P1 + X (x) P2 + Y (x) P3` on 2x3.
pub fn saturation() -> BipartiteUnitary {
    let m = kron(&identity(2), &basis_projector(3, 0))
        + kron(&pauli_x(), &basis_projector(3, 1))
        + kron(&pauli_y(), &basis_projector(3, 2));
    unitary(2, 3, m)
}

/// Input on `A (x) A' (x) B` whose image under [`saturation`] has
/// `log2 3` ebits across `AA' | B`: a Bell pair on `AA'` times the uniform
/// superposition on `B`. The ancilla is labelled `Ap`.
pub fn saturation_input() -> PureState {
    let bell = maximally_entangled_on(2, "A", "Ap").expect("rank 2");
    let uniform = ComplexVector::from_element(3, c(1.0 / 3f64.sqrt(), 0.0));
    let b = PureState::new(vec!["B".into()], vec![3], uniform).expect("normalized");
    bell.tensor(&b).expect("distinct labels")
}

pub fn all() -> Vec<Fixture> {
    vec![
        Fixture {
            name: "identity",
            description: "identity on a 2x2 system (local, Schmidt rank 1)",
            d_a: 2,
            d_b: 2,
            builder: identity_2x2,
            expected: ExpectedFacts {
                schmidt_rank: 1,
                groups_a: Some(1),
                groups_b: Some(1),
                blocks_a: Some(vec![1, 1]),
                blocks_b: Some(vec![1, 1]),
                partial_transpose_rank: 4,
            },
        },
        Fixture {
            name: "cnot",
            description: "controlled-NOT, control on A",
            d_a: 2,
            d_b: 2,
            builder: cnot,
            expected: ExpectedFacts {
                schmidt_rank: 2,
                groups_a: Some(2),
                groups_b: Some(2),
                blocks_a: Some(vec![1, 1]),
                blocks_b: Some(vec![1, 1]),
                partial_transpose_rank: 4,
            },
        },
        Fixture {
            name: "swap",
            description: "two-qubit SWAP (Schmidt rank 4, not controlled)",
            d_a: 2,
            d_b: 2,
            builder: swap,
            expected: ExpectedFacts {
                schmidt_rank: 4,
                groups_a: None,
                groups_b: None,
                blocks_a: None,
                blocks_b: None,
                partial_transpose_rank: 1,
            },
        },
        Fixture {
            name: "v324",
            description: "Schmidt rank 3 on 2x4, controlled from B with four terms only",
            d_a: 2,
            d_b: 4,
            builder: v324,
            expected: ExpectedFacts {
                schmidt_rank: 3,
                groups_a: None,
                groups_b: Some(4),
                blocks_a: None,
                blocks_b: Some(vec![1, 1, 1, 1]),
                partial_transpose_rank: 8,
            },
        },
        Fixture {
            name: "bcu",
            description: "qutrit-qubit block-controlled unitary of Schmidt rank 4 (blocks 2+1 on A)",
            d_a: 3,
            d_b: 2,
            builder: bcu_qutrit_qubit,
            expected: ExpectedFacts {
                schmidt_rank: 4,
                groups_a: None,
                groups_b: None,
                blocks_a: Some(vec![2, 1]),
                blocks_b: None,
                partial_transpose_rank: 3,
            },
        },
        Fixture {
            name: "three_by_three",
            description: "sum_i (U_i + |3><3|) (x) |i><i| on 3x3, controlled from B only",
            d_a: 3,
            d_b: 3,
            builder: three_by_three,
            expected: ExpectedFacts {
                schmidt_rank: 3,
                groups_a: None,
                groups_b: Some(3),
                blocks_a: Some(vec![2, 1]),
                blocks_b: Some(vec![1, 1, 1]),
                partial_transpose_rank: 9,
            },
        },
        Fixture {
            name: "saturation",
            description: "I (x) P1 + X (x) P2 + Y (x) P3 on 2x3, needs exactly log2(3) ebits",
            d_a: 2,
            d_b: 3,
            builder: saturation,
            expected: ExpectedFacts {
                schmidt_rank: 3,
                groups_a: None,
                groups_b: Some(3),
                blocks_a: None,
                blocks_b: Some(vec![1, 1, 1]),
                partial_transpose_rank: 6,
            },
        },
    ]
}

pub fn by_name(name: &str) -> Option<Fixture> {
    all().into_iter().find(|f| f.name == name)
}
