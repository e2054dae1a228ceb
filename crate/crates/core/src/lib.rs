//! Structure of bipartite unitary operators.
//!
//! The crate decides and certifies controlled-unitary structure of operators
//! on a `d_A x d_B` system, canonicalizes stochastic-local equivalences into
//! local-unitary ones, simulates the LOCC protocols that implement such
//! operators with maximally entangled resources, and probes rank
//! inequalities for partial transposes.

pub mod controlled;
pub mod equivalence;
pub mod error;
pub mod fixtures;
pub mod instances;
pub mod io;
pub mod linalg;
pub mod protocol;
pub mod random;
pub mod ranks;
pub mod schmidt;

pub use error::{Error, Result};
pub use linalg::{ComplexMatrix, Tolerance};
pub use schmidt::BipartiteUnitary;
