//! Matrix-product operator for nearest-neighbour Hamiltonians.
//!
//! Virtual index convention on the bond right of site `j`: `0` = nothing
//! placed yet, `1..=c` = a two-site product opened on site `j` and waiting
//! for its right factor, `c + 1` = complete. The first site keeps only the
//! "nothing placed" row, the last site only the "complete" column.

use nalgebra::DMatrix;

use crate::models::{HamiltonianSpec, LocalOp};

/// Nonzero entries `(out, in, value)` of a local operator.
pub type SparseOp = Vec<(usize, usize, f64)>;

#[derive(Clone, Debug)]
pub struct MpoEntry {
    pub left: usize,
    pub right: usize,
    pub op: SparseOp,
}

#[derive(Clone, Debug)]
pub struct MpoSite {
    pub wl: usize,
    pub wr: usize,
    pub entries: Vec<MpoEntry>,
}

fn sparse(m: &DMatrix<f64>) -> SparseOp {
    let mut out = Vec::new();
    for i in 0..m.ncols() {
        for o in 0..m.nrows() {
            let v = m[(o, i)];
            if v != 0.0 {
                out.push((o, i, v));
            }
        }
    }
    out
}

pub fn build_mpo(spec: &HamiltonianSpec) -> Vec<MpoSite> {
    let len = spec.len;
    let d = spec.local_dim();
    // per bond j (sites j, j+1): list of (left op * coefficient, right op)
    let mut channels: Vec<Vec<(DMatrix<f64>, DMatrix<f64>)>> = vec![Vec::new(); len.saturating_sub(1)];
    let mut onsite: Vec<DMatrix<f64>> = vec![DMatrix::zeros(d, d); len];
    for term in &spec.terms {
        for (site, a, b, c) in term.expand() {
            match b {
                None => onsite[site] += spec.space.matrix(a) * c,
                Some(b) => {
                    if c != 0.0 {
                        channels[site].push((spec.space.matrix(a) * c, spec.space.matrix(b)));
                    }
                }
            }
        }
    }
    let ident = spec.space.matrix(LocalOp::Id);
    let mut sites = Vec::with_capacity(len);
    for j in 0..len {
        let first = j == 0;
        let last = j + 1 == len;
        let ch_left = if first { 0 } else { channels[j - 1].len() };
        let ch_right = if last { 0 } else { channels[j].len() };
        let wl = if first { 1 } else { ch_left + 2 };
        let wr = if last { 1 } else { ch_right + 2 };
        let done_l = if first { usize::MAX } else { ch_left + 1 };
        let done_r = if last { 0 } else { ch_right + 1 };
        let mut entries = Vec::new();
        let mut push = |left: usize, right: usize, m: &DMatrix<f64>| {
            let op = sparse(m);
            if !op.is_empty() {
                entries.push(MpoEntry { left, right, op });
            }
        };
        if !last {
            push(0, 0, &ident);
            for (k, (a, _)) in channels[j].iter().enumerate() {
                push(0, 1 + k, a);
            }
        }
        push(0, done_r, &onsite[j]);
        if !first {
            for (k, (_, b)) in channels[j - 1].iter().enumerate() {
                push(1 + k, done_r, b);
            }
            push(done_l, done_r, &ident);
        }
        sites.push(MpoSite { wl, wr, entries });
    }
    sites
}
