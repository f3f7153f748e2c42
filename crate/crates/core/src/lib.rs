//! Two interacting particles on a ring with a complex quasiperiodic potential.
//!
//! The model is a Hubbard ring with on-site potential
//! `V cos(2 pi alpha l + theta + i h)`. The crate builds the one- and
//! two-particle Hamiltonians, diagonalizes them, computes point-gap winding
//! numbers from determinant phases, provides the strong-coupling doublon
//! model, and propagates two-particle states under post-selected
//! (renormalized) non-Hermitian dynamics.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod doublon;
pub mod dynamics;
pub mod error;
pub mod hamiltonian;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod spectral;
pub mod sweep;
pub mod topology;

pub use num_complex::Complex64;

pub use error::{Error, Result};
pub use hamiltonian::{
    apply_h2, build_h1, build_h2, ExchangeSector, PairOperator, SectorBasis, SingleParticleHamiltonian,
    TwoParticleHamiltonian,
};
pub use linalg::CMatrix;
pub use model::{fibonacci_approximant, ModelConfig, ModelParams, PairIndex, Rational};
pub use spectral::{Sector, SpectrumResult, StateClass};

/// Runs faer's dense kernels single-threaded. Parallelism in this crate is
/// applied across independent tasks instead, which keeps results independent
/// of the worker count.
pub fn use_sequential_linalg() {
    faer::set_global_parallelism(faer::Par::Seq);
}
