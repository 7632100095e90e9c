//! Charge-blocked matrix product states.
//!
//! Bond `b` sits left of site `b` (bond 0 and bond L are the trivial
//! boundaries). Bond charges count the charge accumulated from the left, so a
//! block `(q_left, σ)` of a site tensor maps left sector `q_left` to right
//! sector `q_left + q(σ)`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SVD};

use crate::models::{Charge, ModelId};

pub type Block = DMatrix<f64>;

/// Sector structure of one virtual bond: charge -> block dimension.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BondSpace {
    pub sectors: BTreeMap<Charge, usize>,
}

impl BondSpace {
    pub fn trivial(q: Charge) -> Self {
        BondSpace { sectors: BTreeMap::from([(q, 1)]) }
    }

    pub fn dim(&self) -> usize {
        self.sectors.values().sum()
    }

    pub fn get(&self, q: Charge) -> Option<usize> {
        self.sectors.get(&q).copied()
    }

    pub fn charges(&self) -> Vec<(Charge, usize)> {
        self.sectors.iter().map(|(q, d)| (*q, *d)).collect()
    }
}

/// Blocks keyed by `(left charge, physical index)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SiteTensor {
    pub blocks: BTreeMap<(Charge, usize), Block>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpsState {
    pub tensors: Vec<SiteTensor>,
    /// `len + 1` bonds.
    pub bonds: Vec<BondSpace>,
    pub phys_charges: Vec<Charge>,
    /// Site holding the non-isometric tensor.
    pub center: usize,
    pub energy: f64,
    /// Discarded weight summed over the SVDs of the final sweep.
    pub truncation_error: f64,
    pub sweep_energies: Vec<f64>,
    pub converged: bool,
    pub model: ModelId,
    pub control_value: f64,
    pub filling: [f64; 2],
}

/// Thin SVD with singular values sorted in decreasing order.
pub fn svd_sorted(m: &Block) -> (Block, Vec<f64>, Block) {
    let svd = SVD::new(m.clone(), true, true);
    let u = svd.u.expect("left vectors requested");
    let vt = svd.v_t.expect("right vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let s: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u_sorted = Block::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let vt_sorted = Block::from_fn(order.len(), vt.ncols(), |r, c| vt[(order[r], c)]);
    (u_sorted, s, vt_sorted)
}

impl MpsState {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Product state for a configuration of local basis indices.
    pub fn product(config: &[usize], phys_charges: &[Charge], model: ModelId, control_value: f64, filling: [f64; 2]) -> Self {
        let mut bonds = vec![BondSpace::trivial(Charge::ZERO)];
        let mut tensors = Vec::with_capacity(config.len());
        let mut q = Charge::ZERO;
        for &s in config {
            let mut t = SiteTensor::default();
            t.blocks.insert((q, s), Block::from_element(1, 1, 1.0));
            tensors.push(t);
            q = q + phys_charges[s];
            bonds.push(BondSpace::trivial(q));
        }
        MpsState {
            tensors,
            bonds,
            phys_charges: phys_charges.to_vec(),
            center: 0,
            energy: f64::NAN,
            truncation_error: 0.0,
            sweep_energies: Vec::new(),
            converged: false,
            model,
            control_value,
            filling,
        }
    }

    pub fn total_charge(&self) -> Charge {
        let last = self.bonds.last().expect("at least one bond");
        *last.sectors.keys().next().expect("right boundary has one sector")
    }

    pub fn max_bond_dim(&self) -> usize {
        self.bonds.iter().map(BondSpace::dim).max().unwrap_or(0)
    }

    /// Every stored block is charge-consistent and sized by its bonds.
    pub fn check_block_structure(&self) -> Result<(), String> {
        for (j, t) in self.tensors.iter().enumerate() {
            for (&(ql, s), b) in &t.blocks {
                let qr = ql + self.phys_charges[s];
                let dl = self.bonds[j].get(ql).ok_or(format!("site {j}: left charge {ql:?} not on bond"))?;
                let dr = self.bonds[j + 1].get(qr).ok_or(format!("site {j}: right charge {qr:?} not on bond"))?;
                if b.nrows() != dl || b.ncols() != dr {
                    return Err(format!("site {j}: block {:?} has shape {:?}, bonds say {dl}x{dr}", (ql, s), b.shape()));
                }
            }
        }
        Ok(())
    }

    /// `max |Σ_σ A^T A - 1|` over the right sectors of site `j`.
    pub fn left_isometry_error(&self, j: usize) -> f64 {
        let mut acc: BTreeMap<Charge, Block> = BTreeMap::new();
        for (&(ql, s), b) in &self.tensors[j].blocks {
            let qr = ql + self.phys_charges[s];
            let e = acc.entry(qr).or_insert_with(|| Block::zeros(b.ncols(), b.ncols()));
            *e += b.transpose() * b;
        }
        self.bonds[j + 1]
            .charges()
            .iter()
            .map(|&(q, d)| {
                let g = acc.get(&q).cloned().unwrap_or_else(|| Block::zeros(d, d));
                (g - Block::identity(d, d)).abs().max()
            })
            .fold(0.0, f64::max)
    }

    /// `max |Σ_σ B B^T - 1|` over the left sectors of site `j`.
    pub fn right_isometry_error(&self, j: usize) -> f64 {
        let mut acc: BTreeMap<Charge, Block> = BTreeMap::new();
        for (&(ql, _), b) in &self.tensors[j].blocks {
            let e = acc.entry(ql).or_insert_with(|| Block::zeros(b.nrows(), b.nrows()));
            *e += b * b.transpose();
        }
        self.bonds[j]
            .charges()
            .iter()
            .map(|&(q, d)| {
                let g = acc.get(&q).cloned().unwrap_or_else(|| Block::zeros(d, d));
                (g - Block::identity(d, d)).abs().max()
            })
            .fold(0.0, f64::max)
    }

    /// Largest deviation from mixed-canonical form around the current center.
    pub fn canonical_error(&self) -> f64 {
        let left = (0..self.center).map(|j| self.left_isometry_error(j));
        let right = (self.center + 1..self.len()).map(|j| self.right_isometry_error(j));
        left.chain(right).fold(0.0, f64::max)
    }

    /// Amplitude of a product configuration.
    pub fn amplitude(&self, config: &[usize]) -> f64 {
        let mut v = Block::from_element(1, 1, 1.0);
        let mut q = Charge::ZERO;
        for (t, &s) in self.tensors.iter().zip(config) {
            match t.blocks.get(&(q, s)) {
                Some(b) => v *= b,
                None => return 0.0,
            }
            q = q + self.phys_charges[s];
        }
        if v.len() == 1 {
            v[(0, 0)]
        } else {
            0.0
        }
    }

    /// Moves the orthogonality center one site right with an exact SVD.
    fn shift_center_right(&mut self) {
        let j = self.center;
        assert!(j + 1 < self.len());
        let phys = self.phys_charges.clone();
        // rows (ql, s) grouped by right charge
        let mut groups: BTreeMap<Charge, Vec<((Charge, usize), usize)>> = BTreeMap::new();
        for (&(ql, s), b) in &self.tensors[j].blocks {
            groups.entry(ql + phys[s]).or_default().push(((ql, s), b.nrows()));
        }
        let mut new_left = SiteTensor::default();
        let mut carry: BTreeMap<Charge, Block> = BTreeMap::new();
        let mut bond = BondSpace::default();
        for (qr, rows) in groups {
            let dr = self.bonds[j + 1].get(qr).expect("bond sector");
            let total: usize = rows.iter().map(|r| r.1).sum();
            let mut m = Block::zeros(total, dr);
            let mut off = 0;
            for (key, dl) in &rows {
                m.view_mut((off, 0), (*dl, dr)).copy_from(&self.tensors[j].blocks[key]);
                off += dl;
            }
            let (u, s, vt) = svd_sorted(&m);
            let k = s.len();
            let mut off = 0;
            for (key, dl) in &rows {
                new_left.blocks.insert(*key, u.view((off, 0), (*dl, k)).into_owned());
                off += dl;
            }
            let sv = Block::from_fn(k, dr, |r, c| s[r] * vt[(r, c)]);
            carry.insert(qr, sv);
            bond.sectors.insert(qr, k);
        }
        let mut next = SiteTensor::default();
        for (&(qm, s), b) in &self.tensors[j + 1].blocks {
            if let Some(c) = carry.get(&qm) {
                next.blocks.insert((qm, s), c * b);
            }
        }
        self.tensors[j] = new_left;
        self.tensors[j + 1] = next;
        self.bonds[j + 1] = bond;
        self.center = j + 1;
    }

    /// Moves the orthogonality center one site left with an exact SVD.
    fn shift_center_left(&mut self) {
        let j = self.center;
        assert!(j > 0);
        let phys = self.phys_charges.clone();
        let mut groups: BTreeMap<Charge, Vec<((Charge, usize), usize)>> = BTreeMap::new();
        for (&(ql, s), b) in &self.tensors[j].blocks {
            groups.entry(ql).or_default().push(((ql, s), b.ncols()));
        }
        let mut new_right = SiteTensor::default();
        let mut carry: BTreeMap<Charge, Block> = BTreeMap::new();
        let mut bond = BondSpace::default();
        for (ql, cols) in groups {
            let dl = self.bonds[j].get(ql).expect("bond sector");
            let total: usize = cols.iter().map(|c| c.1).sum();
            let mut m = Block::zeros(dl, total);
            let mut off = 0;
            for (key, dr) in &cols {
                m.view_mut((0, off), (dl, *dr)).copy_from(&self.tensors[j].blocks[key]);
                off += dr;
            }
            let (u, s, vt) = svd_sorted(&m);
            let k = s.len();
            let mut off = 0;
            for (key, dr) in &cols {
                new_right.blocks.insert(*key, vt.view((0, off), (k, *dr)).into_owned());
                off += dr;
            }
            let us = Block::from_fn(dl, k, |r, c| u[(r, c)] * s[c]);
            carry.insert(ql, us);
            bond.sectors.insert(ql, k);
        }
        let mut prev = SiteTensor::default();
        for (&(ql, s), b) in &self.tensors[j - 1].blocks {
            if let Some(c) = carry.get(&(ql + phys[s])) {
                prev.blocks.insert((ql, s), b * c);
            }
        }
        self.tensors[j] = new_right;
        self.tensors[j - 1] = prev;
        self.bonds[j] = bond;
        self.center = j - 1;
    }

    pub fn move_center_to(&mut self, site: usize) {
        assert!(site < self.len(), "site {site} out of range");
        while self.center < site {
            self.shift_center_right();
        }
        while self.center > site {
            self.shift_center_left();
        }
    }

    /// Schmidt values at `bond` (1 ≤ bond ≤ L-1), grouped by left-block
    /// charge. Works on a copy; `self` is untouched.
    pub fn schmidt_values(&self, bond: usize) -> Vec<(Charge, Vec<f64>)> {
        let mut work = self.clone();
        work.move_center_to(bond);
        let t = &work.tensors[bond];
        let mut groups: BTreeMap<Charge, Vec<&Block>> = BTreeMap::new();
        for (&(ql, _), b) in &t.blocks {
            groups.entry(ql).or_default().push(b);
        }
        let mut out = Vec::new();
        for (ql, blocks) in groups {
            let dl = blocks[0].nrows();
            let total: usize = blocks.iter().map(|b| b.ncols()).sum();
            let mut m = Block::zeros(dl, total);
            let mut off = 0;
            for b in blocks {
                m.view_mut((0, off), (dl, b.ncols())).copy_from(b);
                off += b.ncols();
            }
            let s = SVD::new(m, false, false).singular_values;
            out.push((ql, s.iter().copied().collect()));
        }
        out
    }
}
