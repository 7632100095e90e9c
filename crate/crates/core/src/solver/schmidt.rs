//! Schmidt decomposition of a ground state across one bond.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SVD};

use super::ed::StateVector;
use super::mps::MpsState;
use super::SolverError;
use crate::models::Charge;
use crate::spectra::LabeledSpectrum;

/// Schmidt weights below this are dropped and counted as truncation error.
pub const DEFAULT_WEIGHT_FLOOR: f64 = 1e-14;

/// A state whose bipartite spectrum can be computed.
pub trait Bipartite {
    fn chain_len(&self) -> usize;
    /// Singular values per left-block charge.
    fn singular_values(&self, bond: usize) -> Vec<(Charge, Vec<f64>)>;
    fn spectrum_meta(&self) -> (crate::models::ModelId, f64, [f64; 2], f64);
}

impl Bipartite for MpsState {
    fn chain_len(&self) -> usize {
        self.len()
    }

    fn singular_values(&self, bond: usize) -> Vec<(Charge, Vec<f64>)> {
        self.schmidt_values(bond)
    }

    fn spectrum_meta(&self) -> (crate::models::ModelId, f64, [f64; 2], f64) {
        (self.model, self.control_value, self.filling, self.truncation_error)
    }
}

impl Bipartite for StateVector {
    fn chain_len(&self) -> usize {
        self.len
    }

    fn singular_values(&self, bond: usize) -> Vec<(Charge, Vec<f64>)> {
        let right_radix = (self.local_dim as u64).pow((self.len - bond) as u32);
        // left charge -> (left code -> row, right code -> col, entries)
        type Sector = (BTreeMap<u64, usize>, BTreeMap<u64, usize>, Vec<(u64, u64, f64)>);
        let mut sectors: BTreeMap<Charge, Sector> = BTreeMap::new();
        for (i, &code) in self.basis.iter().enumerate() {
            let left = code / right_radix;
            let right = code % right_radix;
            let q = self.config(i)[..bond].iter().fold(Charge::ZERO, |acc, &s| acc + self.site_charges[s]);
            let e = sectors.entry(q).or_default();
            let n = e.0.len();
            e.0.entry(left).or_insert(n);
            let n = e.1.len();
            e.1.entry(right).or_insert(n);
            e.2.push((left, right, self.amplitudes[i]));
        }
        sectors
            .into_iter()
            .map(|(q, (rows, cols, entries))| {
                let mut m = DMatrix::zeros(rows.len(), cols.len());
                for (l, r, a) in entries {
                    m[(rows[&l], cols[&r])] = a;
                }
                let s = SVD::new(m, false, false).singular_values;
                (q, s.iter().copied().collect())
            })
            .collect()
    }

    fn spectrum_meta(&self) -> (crate::models::ModelId, f64, [f64; 2], f64) {
        (self.model, self.control_value, self.filling, 0.0)
    }
}

/// Entanglement spectrum `p = s²` across `bond` (default `L/2`), labeled by
/// the left-block charge. Weights below `floor` are dropped; the dropped
/// weight is added to the truncation error so the kept weights sum to
/// `1 - truncation_error`.
pub fn schmidt_decompose<S: Bipartite>(
    state: &S,
    bond: Option<usize>,
    floor: f64,
) -> Result<LabeledSpectrum, SolverError> {
    let len = state.chain_len();
    let bond = bond.unwrap_or(len / 2);
    if bond == 0 || bond >= len {
        return Err(SolverError::Index(format!("bond {bond} outside 1..={}", len.saturating_sub(1))));
    }
    let raw = state.singular_values(bond);
    let total: f64 = raw.iter().flat_map(|(_, s)| s.iter()).map(|s| s * s).sum();
    if !(total > 0.0) {
        return Err(SolverError::Index("state has zero norm".into()));
    }
    let mut dropped = 0.0;
    let sectors: Vec<(Charge, Vec<f64>)> = raw
        .into_iter()
        .map(|(q, s)| {
            let mut kept = Vec::new();
            for v in s {
                let p = v * v / total;
                if p >= floor {
                    kept.push(p);
                } else {
                    dropped += p;
                }
            }
            (q, kept)
        })
        .filter(|(_, p)| !p.is_empty())
        .collect();
    // renormalize so the kept weight equals 1 - dropped exactly
    let kept_sum: f64 = sectors.iter().flat_map(|(_, p)| p.iter()).sum();
    let scale = (1.0 - dropped) / kept_sum;
    let sectors = sectors.into_iter().map(|(q, p)| (q, p.into_iter().map(|v| v * scale).collect())).collect();
    let (model, control, filling, _) = state.spectrum_meta();
    Ok(LabeledSpectrum::from_sectors(sectors, len, bond, model, control, dropped, filling))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::*;
    use crate::solver::dmrg::{dmrg_ground_state, DmrgConfig};
    use crate::solver::ed::ed_ground_state;

    #[test]
    fn weights_sum_to_one_minus_truncation() {
        let spec = build_xxz(8, &XxzParams { j: 1.0, delta: -0.5 }).unwrap();
        let (_, psi) = ed_ground_state(&spec).unwrap();
        for floor in [0.0, 1e-14, 1e-4, 1e-2] {
            let s = schmidt_decompose(&psi, None, floor).unwrap();
            assert!((s.total_weight() - (1.0 - s.truncation_error)).abs() < 1e-13);
            assert!(s.entries.iter().all(|e| e.p >= floor));
            assert_eq!(s.bond, 4);
        }
    }

    #[test]
    fn bond_out_of_range_is_an_index_error() {
        let spec = build_xxz(4, &XxzParams::default()).unwrap();
        let (_, psi) = ed_ground_state(&spec).unwrap();
        assert!(matches!(schmidt_decompose(&psi, Some(0), 0.0), Err(SolverError::Index(_))));
        assert!(matches!(schmidt_decompose(&psi, Some(4), 0.0), Err(SolverError::Index(_))));
        assert!(schmidt_decompose(&psi, Some(3), 0.0).is_ok());
    }

    #[test]
    fn mps_and_vector_spectra_agree() {
        let spec = build_bh(6, &BhParams { j: 1.0, u: 3.0, n_max: 3 }).unwrap();
        let (_, psi) = ed_ground_state(&spec).unwrap();
        let mps = dmrg_ground_state(&spec, &DmrgConfig::default()).unwrap();
        for bond in 1..6 {
            let a = schmidt_decompose(&psi, Some(bond), 1e-10).unwrap();
            let b = schmidt_decompose(&mps, Some(bond), 1e-10).unwrap();
            for e in &a.entries {
                let other = b.get(e.charge, e.k).expect("sector present in both");
                assert!((e.p - other).abs() < 1e-7, "bond {bond}: {e:?} vs {other}");
            }
        }
    }
}
