//! Ground-state solvers: exact diagonalization and DMRG.

pub mod dmrg;
pub mod ed;
pub mod lanczos;
pub mod mpo;
pub mod mps;
pub mod schmidt;

use thiserror::Error;

pub use dmrg::{dmrg_ground_state, DmrgConfig};
pub use ed::{ed_ground_state, free_fermion_energy, StateVector};
pub use mps::MpsState;
pub use schmidt::{schmidt_decompose, Bipartite, DEFAULT_WEIGHT_FLOOR};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("problem too large: {0}")]
    Size(String),
    #[error("empty or unreachable charge sector: {0}")]
    Sector(String),
    #[error("eigensolver failed: {0}")]
    Iteration(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] crate::models::ModelError),
}
