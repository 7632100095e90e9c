//! Charge-resolved entanglement spectra and the observables built on them.
//!
//! Eigenvalues of the reduced density matrix are stored with the raw charge of
//! the left block; the shifted label `δN = N_A - ν L_A` is computed on demand.
//! Feature vectors for the autoencoder are obtained by reading a spectrum along
//! a fixed sequence of `(sector, k)` slots taken from a reference spectrum.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{Charge, ModelId};

#[derive(Debug, Error, PartialEq)]
pub enum SpectrumError {
    #[error("eigenvalue {0} is outside (0, 1]: logarithm undefined")]
    Domain(f64),
    #[error("Schmidt gap needs at least two eigenvalues")]
    UndefinedGap,
    #[error("spectrum structure: {0}")]
    Structure(String),
    #[error("spectrum is empty")]
    Empty,
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEntry {
    pub p: f64,
    /// Raw left-block charge.
    pub charge: Charge,
    /// Rank inside the sector, by decreasing `p`.
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSpectrum {
    /// Grouped by ascending charge, then ascending `k`.
    pub entries: Vec<SpectrumEntry>,
    pub len: usize,
    /// Number of sites in the left block.
    pub bond: usize,
    pub model: ModelId,
    pub control_value: f64,
    pub truncation_error: f64,
    /// Mean charge per site, per component.
    pub filling: [f64; 2],
}

impl LabeledSpectrum {
    /// Builds a spectrum from per-sector eigenvalues. Sectors are sorted by
    /// charge and each sector by decreasing value (stable), which fixes `k`.
    pub fn from_sectors(
        sectors: Vec<(Charge, Vec<f64>)>,
        len: usize,
        bond: usize,
        model: ModelId,
        control_value: f64,
        truncation_error: f64,
        filling: [f64; 2],
    ) -> Self {
        let mut grouped: BTreeMap<Charge, Vec<f64>> = BTreeMap::new();
        for (q, vals) in sectors {
            grouped.entry(q).or_default().extend(vals);
        }
        let mut entries = Vec::new();
        for (charge, mut vals) in grouped {
            vals.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
            entries.extend(vals.into_iter().enumerate().map(|(k, p)| SpectrumEntry { p, charge, k }));
        }
        LabeledSpectrum { entries, len, bond, model, control_value, truncation_error, filling }
    }

    pub fn arity(&self) -> usize {
        self.model.charge_arity()
    }

    /// Shifted sector label `δN = N_A - ν L_A` per charge component.
    pub fn shifted(&self, charge: Charge) -> [f64; 2] {
        let la = self.bond as f64;
        [charge.0 as f64 - self.filling[0] * la, charge.1 as f64 - self.filling[1] * la]
    }

    /// Raw charge whose shifted label is zero, if it is integral.
    pub fn zero_sector(&self) -> Option<Charge> {
        let la = self.bond as f64;
        let c0 = self.filling[0] * la;
        let c1 = self.filling[1] * la;
        (c0.fract() == 0.0 && c1.fract() == 0.0).then_some(Charge(c0 as i32, c1 as i32))
    }

    pub fn total_weight(&self) -> f64 {
        self.entries.iter().map(|e| e.p).sum()
    }

    /// All eigenvalues sorted by decreasing value.
    pub fn sorted_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.entries.iter().map(|e| e.p).collect();
        v.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
        v
    }

    pub fn sector(&self, charge: Charge) -> impl Iterator<Item = &SpectrumEntry> {
        self.entries.iter().filter(move |e| e.charge == charge)
    }

    pub fn get(&self, charge: Charge, k: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.charge == charge && e.k == k).map(|e| e.p)
    }

    /// Checks normalization and the per-sector ordering.
    pub fn validate(&self, min_weight: f64) -> Result<(), SpectrumError> {
        if self.entries.is_empty() {
            return Err(SpectrumError::Empty);
        }
        let w = self.total_weight();
        if !(w >= min_weight && w <= 1.0 + 1e-12) {
            return Err(SpectrumError::Structure(format!("total weight {w} outside [{min_weight}, 1]")));
        }
        for pair in self.entries.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if a.charge == b.charge && (b.k != a.k + 1 || b.p > a.p) {
                return Err(SpectrumError::Structure(format!("sector {:?} is not ranked", a.charge)));
            }
            if a.charge > b.charge {
                return Err(SpectrumError::Structure("sectors out of order".into()));
            }
        }
        if let Some(e) = self.entries.iter().find(|e| !(e.p > 0.0 && e.p <= 1.0 + 1e-12)) {
            return Err(SpectrumError::Domain(e.p));
        }
        Ok(())
    }
}

/// `ξ_i = -log10 p_i` for every entry, in storage order.
pub fn xi_values(s: &LabeledSpectrum) -> Result<Vec<f64>, SpectrumError> {
    s.entries.iter().map(|e| xi(e.p)).collect()
}

fn xi(p: f64) -> Result<f64, SpectrumError> {
    if !(p > 0.0 && p <= 1.0 + 1e-12) {
        return Err(SpectrumError::Domain(p));
    }
    Ok((-p.log10()).max(0.0))
}

/// Von Neumann entropy `-Σ p ln p` (natural log, `0 ln 0 = 0`).
pub fn von_neumann_entropy(s: &LabeledSpectrum) -> f64 {
    entropy_of(s.entries.iter().map(|e| e.p))
}

pub fn entropy_of(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().filter(|&p| p > 0.0).map(|p| -p * p.ln()).sum::<f64>().max(0.0)
}

/// Difference between the two largest eigenvalues.
pub fn schmidt_gap(s: &LabeledSpectrum) -> Result<f64, SpectrumError> {
    let v = s.sorted_values();
    if v.len() < 2 {
        return Err(SpectrumError::UndefinedGap);
    }
    Ok(v[0] - v[1])
}

/// `Δξ₀ = ξ(δN=0, k=1) - ξ(δN=0, k=0)`.
///
/// A degenerate top pair yields `Ok(0.0)` with a logged warning; callers that
/// need a positive spacing must check.
pub fn delta_xi0(s: &LabeledSpectrum) -> Result<f64, SpectrumError> {
    let zero = s
        .zero_sector()
        .ok_or_else(|| SpectrumError::Structure("no integral δN = 0 sector at this bond".into()))?;
    let p0 = s.get(zero, 0);
    let p1 = s.get(zero, 1);
    match (p0, p1) {
        (Some(p0), Some(p1)) => {
            let d = xi(p1)? - xi(p0)?;
            if d <= 0.0 {
                log::warn!("degenerate top pair in δN = 0 sector: Δξ₀ = {d}");
                return Ok(0.0);
            }
            Ok(d)
        }
        _ => Err(SpectrumError::Structure("δN = 0 sector has fewer than two eigenvalues".into())),
    }
}

/// Which sectors of a two-charge spectrum enter a tower table.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Slice {
    All,
    /// δN_A = δN_B
    Density,
    /// δN_A = -δN_B
    Spin,
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct TowerLevel {
    pub delta_n: [f64; 2],
    pub k: usize,
    pub rescaled_xi: f64,
}

/// `(ξ(δN,k) - ξ(δN,0)) / Δξ₀` for every entry in the selected slice.
pub fn conformal_rescale(s: &LabeledSpectrum, slice: Slice) -> Result<Vec<TowerLevel>, SpectrumError> {
    let d0 = delta_xi0(s)?;
    if d0 <= 0.0 {
        return Err(SpectrumError::Structure(format!("Δξ₀ = {d0} is not positive")));
    }
    let mut lowest: HashMap<Charge, f64> = HashMap::new();
    for e in s.entries.iter().filter(|e| e.k == 0) {
        lowest.insert(e.charge, xi(e.p)?);
    }
    let mut out = Vec::new();
    for e in &s.entries {
        let dn = s.shifted(e.charge);
        let keep = match slice {
            Slice::All => true,
            Slice::Density => dn[0] == dn[1],
            Slice::Spin => dn[0] == -dn[1],
        };
        if !keep {
            continue;
        }
        let base = lowest
            .get(&e.charge)
            .ok_or_else(|| SpectrumError::Structure(format!("sector {:?} has no k = 0 entry", e.charge)))?;
        out.push(TowerLevel { delta_n: dn, k: e.k, rescaled_xi: (xi(e.p)? - base) / d0 });
    }
    Ok(out)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Slot {
    pub charge: Charge,
    pub k: usize,
    /// Added by padding rather than read from the reference spectrum.
    pub synthetic: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorSequence {
    pub slots: Vec<Slot>,
    pub origin_control_value: f64,
}

impl SectorSequence {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// Slots of the `n_feat` largest eigenvalues of the reference spectrum, in
/// decreasing order; equal values keep ascending `(charge, k)` order. Short
/// spectra are padded round-robin over sectors with the next unused ranks.
pub fn build_reference_sequence(
    s: &LabeledSpectrum,
    n_feat: usize,
) -> Result<SectorSequence, SpectrumError> {
    if s.entries.is_empty() {
        return Err(SpectrumError::Empty);
    }
    let mut order: Vec<&SpectrumEntry> = s.entries.iter().collect();
    order.sort_by(|a, b| {
        b.p.partial_cmp(&a.p)
            .unwrap_or(Ordering::Equal)
            .then(a.charge.cmp(&b.charge))
            .then(a.k.cmp(&b.k))
    });
    let mut slots: Vec<Slot> = order
        .iter()
        .take(n_feat)
        .map(|e| Slot { charge: e.charge, k: e.k, synthetic: false })
        .collect();
    if slots.len() < n_feat {
        let mut sectors: Vec<Charge> = Vec::new();
        for sl in &slots {
            if !sectors.contains(&sl.charge) {
                sectors.push(sl.charge);
            }
        }
        let mut next: HashMap<Charge, usize> = HashMap::new();
        for e in &s.entries {
            let n = next.entry(e.charge).or_insert(0);
            *n = (*n).max(e.k + 1);
        }
        'fill: loop {
            for q in &sectors {
                if slots.len() == n_feat {
                    break 'fill;
                }
                let k = next.get_mut(q).expect("sector present");
                slots.push(Slot { charge: *q, k: *k, synthetic: true });
                *k += 1;
            }
        }
    }
    Ok(SectorSequence { slots, origin_control_value: s.control_value })
}

/// Fixed-length autoencoder input. Charge labels are not carried.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub control_value: f64,
    pub len: usize,
    pub model: ModelId,
}

impl FeatureVector {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Reads `s` along the slots of `seq`; absent slots hold exactly 0.
pub fn align_to_reference(s: &LabeledSpectrum, seq: &SectorSequence) -> FeatureVector {
    let lookup: HashMap<(Charge, usize), f64> = s.entries.iter().map(|e| ((e.charge, e.k), e.p)).collect();
    let values = seq
        .slots
        .iter()
        .map(|sl| lookup.get(&(sl.charge, sl.k)).copied().unwrap_or(0.0).clamp(0.0, 1.0))
        .collect();
    FeatureVector { values, control_value: s.control_value, len: s.len, model: s.model }
}

/// Relative entropy `Σ P ln(P / max(Q, floor))` between two aligned vectors,
/// each first rescaled to unit sum.
pub fn kl_divergence(p: &[f64], q: &[f64], floor: f64) -> f64 {
    assert_eq!(p.len(), q.len(), "KL divergence needs aligned vectors");
    let sp: f64 = p.iter().sum();
    let sq: f64 = q.iter().sum();
    if sp <= 0.0 || sq <= 0.0 {
        return 0.0;
    }
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| {
            let pn = pi / sp;
            let qn = (qi / sq).max(floor);
            pn * (pn / qn).ln()
        })
        .sum()
}

/// KL divergence of spectrum `p` from reference `q`, both read along `seq`.
pub fn kl_between(p: &LabeledSpectrum, q: &LabeledSpectrum, seq: &SectorSequence, floor: f64) -> f64 {
    kl_divergence(&align_to_reference(p, seq).values, &align_to_reference(q, seq).values, floor)
}

pub const DEFAULT_KL_FLOOR: f64 = 1e-12;
pub const DEFAULT_N_FEAT: usize = 64;
