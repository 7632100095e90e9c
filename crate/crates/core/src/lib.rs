//! Anomaly detection of quantum phase transitions from entanglement spectra.
//!
//! Ground states of one-dimensional lattice models ([`models`]) are computed
//! with DMRG or exact diagonalization ([`solver`]); their bipartite
//! entanglement spectra ([`spectra`]) become fixed-length feature vectors on
//! which an adversarially trained autoencoder ([`gan`]) is fit inside a known
//! phase. The reconstruction error elsewhere is the anomaly score.

pub mod models;
pub mod solver;
pub mod spectra;
pub mod neuralnet;
pub mod gan;
pub mod pipeline;
