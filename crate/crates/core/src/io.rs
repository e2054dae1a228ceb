//! JSON file formats. Complex entries are `[re, im]` pairs and matrices are
//! lists of rows.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::controlled::{ControlGroup, ControlledForm};
use crate::equivalence::{LocalEquivalenceWitness, SLWitness};
use crate::error::{Error, Result};
use crate::linalg::{c, ComplexMatrix, ComplexVector, Tolerance};
use crate::protocol::PureState;
use crate::ranks::KroneckerSum;
use crate::schmidt::{BipartiteUnitary, Side};

pub type JsonMatrix = Vec<Vec<[f64; 2]>>;

pub fn matrix_to_json(m: &ComplexMatrix) -> JsonMatrix {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

pub fn matrix_from_json(rows: &JsonMatrix) -> Result<ComplexMatrix> {
    let n = rows.len();
    let cols = rows.first().map_or(0, |r| r.len());
    if n == 0 || cols == 0 {
        return Err(Error::Parse("matrix must have at least one row and column".into()));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != cols) {
        return Err(Error::Parse(format!("row {i} has {} entries, expected {cols}", rows[i].len())));
    }
    let m = ComplexMatrix::from_fn(n, cols, |i, j| c(rows[i][j][0], rows[i][j][1]));
    crate::linalg::check_finite(&m)?;
    Ok(m)
}

fn vector_to_json(v: &ComplexVector) -> Vec<[f64; 2]> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

/// Bipartite operator on `d_A x d_B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixFile {
    #[serde(rename = "d_A")]
    pub d_a: usize,
    #[serde(rename = "d_B")]
    pub d_b: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub matrix: JsonMatrix,
}

impl MatrixFile {
    pub fn from_matrix(d_a: usize, d_b: usize, m: &ComplexMatrix) -> Self {
        MatrixFile { d_a, d_b, name: None, description: None, matrix: matrix_to_json(m) }
    }

    pub fn from_unitary(u: &BipartiteUnitary) -> Self {
        Self::from_matrix(u.d_a(), u.d_b(), u.matrix())
    }

    /// The operator, checked against the declared dimensions.
    pub fn operator(&self) -> Result<ComplexMatrix> {
        let m = matrix_from_json(&self.matrix)?;
        let d = self.d_a * self.d_b;
        if m.shape() != (d, d) {
            return Err(Error::ShapeError(format!(
                "matrix is {}x{}, expected {d}x{d} for d_A={} d_B={}",
                m.nrows(),
                m.ncols(),
                self.d_a,
                self.d_b
            )));
        }
        Ok(m)
    }

    pub fn unitary(&self, tol: &Tolerance) -> Result<BipartiteUnitary> {
        BipartiteUnitary::new(self.d_a, self.d_b, self.operator()?, tol)
    }
}

/// Stochastic-local witness: one `s` and one `t` operator per party.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WitnessFile {
    pub s_ops: Vec<JsonMatrix>,
    pub t_ops: Vec<JsonMatrix>,
}

impl WitnessFile {
    pub fn from_witness(w: &SLWitness) -> Self {
        WitnessFile {
            s_ops: w.s_ops.iter().map(matrix_to_json).collect(),
            t_ops: w.t_ops.iter().map(matrix_to_json).collect(),
        }
    }

    pub fn witness(&self) -> Result<SLWitness> {
        Ok(SLWitness {
            s_ops: self.s_ops.iter().map(matrix_from_json).collect::<Result<_>>()?,
            t_ops: self.t_ops.iter().map(matrix_from_json).collect::<Result<_>>()?,
        })
    }
}

/// Local unitaries found from a witness, with their residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalWitnessFile {
    pub q_ops: Vec<JsonMatrix>,
    pub r_ops: Vec<JsonMatrix>,
    pub residual: f64,
    pub internal_residual: f64,
}

impl LocalWitnessFile {
    pub fn from_witness(w: &LocalEquivalenceWitness) -> Self {
        LocalWitnessFile {
            q_ops: w.q_ops.iter().map(matrix_to_json).collect(),
            r_ops: w.r_ops.iter().map(matrix_to_json).collect(),
            residual: w.residual,
            internal_residual: w.internal_residual,
        }
    }
}

/// One group of a controlled form: 0-based control indices and the unitary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupFile {
    pub indices: Vec<usize>,
    pub v: JsonMatrix,
}

/// Controlled form `(q (x) I) (sum_g P_g (x) v_g) (r (x) I)` or its mirror.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlledFormFile {
    pub side: Side,
    #[serde(rename = "d_A")]
    pub d_a: usize,
    #[serde(rename = "d_B")]
    pub d_b: usize,
    pub q: JsonMatrix,
    pub r: JsonMatrix,
    pub groups: Vec<GroupFile>,
}

impl ControlledFormFile {
    pub fn from_form(cf: &ControlledForm) -> Self {
        ControlledFormFile {
            side: cf.side,
            d_a: cf.d_a,
            d_b: cf.d_b,
            q: matrix_to_json(&cf.q),
            r: matrix_to_json(&cf.r),
            groups: cf.groups.iter().map(|g| GroupFile { indices: g.indices.clone(), v: matrix_to_json(&g.v) }).collect(),
        }
    }

    pub fn form(&self) -> Result<ControlledForm> {
        Ok(ControlledForm {
            side: self.side,
            d_a: self.d_a,
            d_b: self.d_b,
            q: matrix_from_json(&self.q)?,
            r: matrix_from_json(&self.r)?,
            groups: self
                .groups
                .iter()
                .map(|g| Ok(ControlGroup { indices: g.indices.clone(), v: matrix_from_json(&g.v)? }))
                .collect::<Result<_>>()?,
        })
    }
}

/// Pure state on labelled subsystems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFile {
    pub labels: Vec<String>,
    pub dims: Vec<usize>,
    pub amplitudes: Vec<[f64; 2]>,
}

impl StateFile {
    pub fn from_state(s: &PureState) -> Self {
        StateFile { labels: s.labels().to_vec(), dims: s.dims().to_vec(), amplitudes: vector_to_json(s.amplitudes()) }
    }

    pub fn state(&self) -> Result<PureState> {
        let amps = ComplexVector::from_iterator(self.amplitudes.len(), self.amplitudes.iter().map(|z| c(z[0], z[1])));
        PureState::new(self.labels.clone(), self.dims.clone(), amps)
    }
}

/// Operator `sum_j R_j (x) S_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KroneckerSumFile {
    pub r_ops: Vec<JsonMatrix>,
    pub s_ops: Vec<JsonMatrix>,
}

impl KroneckerSumFile {
    pub fn from_sum(ks: &KroneckerSum) -> Self {
        KroneckerSumFile {
            r_ops: ks.r_ops.iter().map(matrix_to_json).collect(),
            s_ops: ks.s_ops.iter().map(matrix_to_json).collect(),
        }
    }

    pub fn kronecker_sum(&self) -> Result<KroneckerSum> {
        KroneckerSum::new(
            self.r_ops.iter().map(matrix_from_json).collect::<Result<_>>()?,
            self.s_ops.iter().map(matrix_from_json).collect::<Result<_>>()?,
        )
    }
}

pub fn from_json_str<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

/// Pretty JSON with a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    from_json_str(&text)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json_string(value)).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}
