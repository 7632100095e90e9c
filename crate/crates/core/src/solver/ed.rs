//! Exact diagonalization in a fixed charge sector.
//!
//! Configurations are encoded as mixed-radix integers with site 0 as the most
//! significant digit, so sorted codes are in lexicographic order and a left
//! block is a code prefix.

use nalgebra::{DMatrix, SymmetricEigen};

use super::lanczos::{lowest_eigenpair, LanczosConfig};
use super::SolverError;
use crate::models::{Charge, HamiltonianSpec, ModelId};

/// Largest sector dimension handled by Lanczos.
pub const MAX_LANCZOS_DIM: usize = 2_000_000;
/// Largest sector dimension handled by dense diagonalization.
pub const MAX_DENSE_DIM: usize = 4_000;
/// Below this dimension the dense path is used.
const DENSE_THRESHOLD: usize = 256;

/// Ground state over the charge-sector basis.
#[derive(Clone, Debug)]
pub struct StateVector {
    pub amplitudes: Vec<f64>,
    /// Sorted configuration codes.
    pub basis: Vec<u64>,
    pub sector: Charge,
    pub len: usize,
    pub local_dim: usize,
    pub site_charges: Vec<Charge>,
    pub model: ModelId,
    pub control_value: f64,
    pub filling: [f64; 2],
}

impl StateVector {
    pub fn config(&self, index: usize) -> Vec<usize> {
        decode(self.basis[index], self.len, self.local_dim)
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a * a).sum::<f64>().sqrt()
    }
}

fn decode(mut code: u64, len: usize, d: usize) -> Vec<usize> {
    let mut out = vec![0; len];
    for slot in out.iter_mut().rev() {
        *slot = (code % d as u64) as usize;
        code /= d as u64;
    }
    out
}

fn encode(config: &[usize], d: usize) -> u64 {
    config.iter().fold(0u64, |acc, &s| acc * d as u64 + s as u64)
}

/// Enumerates all configurations with total charge `target`, sorted.
pub fn sector_basis(spec: &HamiltonianSpec, cap: usize) -> Result<Vec<u64>, SolverError> {
    let d = spec.local_dim();
    let len = spec.len;
    if (len as f64) * (d as f64).log2() >= 63.0 {
        return Err(SolverError::Size(format!("{d}^{len} configurations do not fit a 64-bit code")));
    }
    let charges = spec.space.charges();
    let min_q = charges.iter().fold(Charge(i32::MAX, i32::MAX), |m, q| Charge(m.0.min(q.0), m.1.min(q.1)));
    let max_q = charges.iter().fold(Charge(i32::MIN, i32::MIN), |m, q| Charge(m.0.max(q.0), m.1.max(q.1)));
    let mut out = Vec::new();
    let mut config = vec![0usize; len];

    #[allow(clippy::too_many_arguments)]
    fn rec(
        site: usize,
        acc: Charge,
        config: &mut Vec<usize>,
        out: &mut Vec<u64>,
        charges: &[Charge],
        bounds: (Charge, Charge),
        target: Charge,
        d: usize,
        cap: usize,
    ) -> bool {
        let len = config.len();
        if site == len {
            if acc == target {
                if out.len() >= cap {
                    return false;
                }
                out.push(encode(config, d));
            }
            return true;
        }
        let rest = (len - site - 1) as i32;
        for s in 0..d {
            let q = acc + charges[s];
            let lo = Charge(q.0 + rest * bounds.0 .0, q.1 + rest * bounds.0 .1);
            let hi = Charge(q.0 + rest * bounds.1 .0, q.1 + rest * bounds.1 .1);
            if target.0 < lo.0 || target.0 > hi.0 || target.1 < lo.1 || target.1 > hi.1 {
                continue;
            }
            config[site] = s;
            if !rec(site + 1, q, config, out, charges, bounds, target, d, cap) {
                return false;
            }
        }
        true
    }

    if !rec(0, Charge::ZERO, &mut config, &mut out, &charges, (min_q, max_q), spec.target, d, cap) {
        return Err(SolverError::Size(format!("sector dimension exceeds the cap of {cap}")));
    }
    if out.is_empty() {
        return Err(SolverError::Sector(format!("no configuration carries charge {:?}", spec.target)));
    }
    Ok(out)
}

/// Sparse symmetric matrix in compressed-row form.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    pub dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[idx] * x[self.cols[idx]];
            }
            *yi = acc;
        }
    }

    /// Stored `(row, col, value)` triples.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |idx| (i, self.cols[idx], self.vals[idx]))
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        match row.binary_search(&j) {
            Ok(pos) => self.vals[self.row_ptr[i] + pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.cols[idx])] += self.vals[idx];
            }
        }
        m
    }
}

/// Sparse Hamiltonian restricted to `basis` (which must be closed under the
/// Hamiltonian, as any fixed-charge sector is).
pub fn sector_hamiltonian(spec: &HamiltonianSpec, basis: &[u64]) -> CsrMatrix {
    let d = spec.local_dim();
    let len = spec.len;
    // (site, op columns) with op columns[in] = [(out, value)]
    type Cols = Vec<Vec<(usize, f64)>>;
    let columns = |m: &DMatrix<f64>| -> Cols {
        (0..d).map(|i| (0..d).filter(|&o| m[(o, i)] != 0.0).map(|o| (o, m[(o, i)])).collect()).collect()
    };
    let mut products: Vec<(usize, Cols, Option<Cols>, f64)> = Vec::new();
    for term in &spec.terms {
        for (site, a, b, c) in term.expand() {
            if c == 0.0 {
                continue;
            }
            let ca = columns(&spec.space.matrix(a));
            let cb = b.map(|b| columns(&spec.space.matrix(b)));
            products.push((site, ca, cb, c));
        }
    }
    let mut row_ptr = Vec::with_capacity(basis.len() + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    row_ptr.push(0);
    let mut row: Vec<(usize, f64)> = Vec::new();
    for &code in basis {
        let config = decode(code, len, d);
        row.clear();
        // H is real symmetric, so the column of `code` is also its row
        let mut out = config.clone();
        for (site, ca, cb, c) in &products {
            match cb {
                None => {
                    for &(o, v) in &ca[config[*site]] {
                        out[*site] = o;
                        push_entry(&mut row, basis, encode(&out, d), c * v);
                    }
                    out[*site] = config[*site];
                }
                Some(cb) => {
                    let s2 = site + 1;
                    for &(o1, v1) in &ca[config[*site]] {
                        for &(o2, v2) in &cb[config[s2]] {
                            out[*site] = o1;
                            out[s2] = o2;
                            push_entry(&mut row, basis, encode(&out, d), c * v1 * v2);
                        }
                    }
                    out[*site] = config[*site];
                    out[s2] = config[s2];
                }
            }
        }
        row.sort_by_key(|e| e.0);
        let mut last: Option<usize> = None;
        for &(j, v) in &row {
            if last == Some(j) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                vals.push(v);
                last = Some(j);
            }
        }
        row_ptr.push(cols.len());
    }
    CsrMatrix { dim: basis.len(), row_ptr, cols, vals }
}

fn push_entry(row: &mut Vec<(usize, f64)>, basis: &[u64], code: u64, v: f64) {
    let j = basis.binary_search(&code).expect("Hamiltonian leaves the charge sector");
    row.push((j, v));
}

/// Lowest eigenpair in the target sector: dense diagonalization for small
/// sectors, restarted Lanczos up to [`MAX_LANCZOS_DIM`].
pub fn ed_ground_state(spec: &HamiltonianSpec) -> Result<(f64, StateVector), SolverError> {
    let basis = sector_basis(spec, MAX_LANCZOS_DIM)?;
    let h = sector_hamiltonian(spec, &basis);
    let dim = basis.len();
    let (energy, mut amplitudes) = if dim <= DENSE_THRESHOLD.min(MAX_DENSE_DIM) {
        let eig = SymmetricEigen::new(h.to_dense());
        let imin = eig.eigenvalues.imin();
        (eig.eigenvalues[imin], eig.eigenvectors.column(imin).iter().copied().collect::<Vec<_>>())
    } else {
        let cfg = LanczosConfig { krylov_dim: 80, tol: 1e-11, max_restarts: 400 };
        let start: Vec<f64> = (0..dim).map(|i| 1.0 + 0.5 * ((i as f64) * 0.754_877_666).fract()).collect();
        let r = lowest_eigenpair(|x, y| h.matvec(x, y), &start, &cfg);
        if !r.converged {
            return Err(SolverError::Iteration(format!(
                "Lanczos residual {:.3e} after {} matvecs",
                r.residual, r.matvecs
            )));
        }
        (r.value, r.vector)
    };
    // fix the overall sign: largest-magnitude amplitude positive
    let (imax, _) = amplitudes
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |acc, (i, &a)| if a.abs() > acc.1 { (i, a.abs()) } else { acc });
    if amplitudes[imax] < 0.0 {
        amplitudes.iter_mut().for_each(|a| *a = -*a);
    }
    let norm = amplitudes.iter().map(|a| a * a).sum::<f64>().sqrt();
    amplitudes.iter_mut().for_each(|a| *a /= norm);
    Ok((
        energy,
        StateVector {
            amplitudes,
            basis,
            sector: spec.target,
            len: spec.len,
            local_dim: spec.local_dim(),
            site_charges: spec.space.charges(),
            model: spec.model_id(),
            control_value: spec.control_value(),
            filling: spec.filling,
        },
    ))
}

/// Free-fermion ground energy of the open XX chain (Δ = 0) at half filling:
/// the sum of the negative single-particle levels `-J cos(kπ/(L+1))`.
pub fn free_fermion_energy(len: usize, j: f64) -> f64 {
    (1..=len)
        .map(|k| -j * (k as f64 * std::f64::consts::PI / (len as f64 + 1.0)).cos())
        .filter(|&e| e < 0.0)
        .sum()
}
