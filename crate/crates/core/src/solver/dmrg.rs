//! Two-site DMRG with U(1) block sparsity.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrixView;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::lanczos::{lowest_eigenpair, LanczosConfig};
use super::mpo::{build_mpo, MpoSite};
use super::mps::{svd_sorted, Block, BondSpace, MpsState, SiteTensor};
use super::SolverError;
use crate::models::{Charge, HamiltonianSpec};

/// Singular values closer than this (relative) form one multiplet.
const DEGENERACY_WINDOW: f64 = 1e-12;

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct DmrgConfig {
    pub chi_max: usize,
    /// Discard Schmidt weights below this.
    pub svd_cutoff: f64,
    pub max_sweeps: usize,
    pub energy_tol: f64,
    pub lanczos_dim: usize,
    pub lanczos_tol: f64,
    pub seed: u64,
    pub warmup_sweeps: usize,
    pub warmup_chi: usize,
    /// Amplitude of the random admixture to the warm-up Lanczos start vectors.
    pub warmup_noise: f64,
}

impl Default for DmrgConfig {
    fn default() -> Self {
        DmrgConfig {
            chi_max: 64,
            svd_cutoff: 1e-10,
            max_sweeps: 12,
            energy_tol: 1e-9,
            lanczos_dim: 20,
            lanczos_tol: 1e-12,
            seed: 0,
            warmup_sweeps: 2,
            warmup_chi: 16,
            warmup_noise: 1e-4,
        }
    }
}

impl DmrgConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.chi_max < 8 {
            return Err(SolverError::Config(format!("chi_max = {} < 8", self.chi_max)));
        }
        if !(self.svd_cutoff > 0.0 && self.svd_cutoff <= 1e-6) {
            return Err(SolverError::Config(format!("svd_cutoff = {} outside (0, 1e-6]", self.svd_cutoff)));
        }
        if !(self.energy_tol > 0.0) {
            return Err(SolverError::Config("energy_tol must be positive".into()));
        }
        if self.max_sweeps == 0 || self.lanczos_dim == 0 {
            return Err(SolverError::Config("max_sweeps and lanczos_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Number of leading values to keep from a decreasing list of singular values.
///
/// Keeps at most `chi_max` values whose normalized weight is at least
/// `cutoff`, then backs off so a degenerate multiplet is never split. Returns
/// the kept count and the discarded weight.
pub fn truncation_rank(sorted: &[f64], chi_max: usize, cutoff: f64) -> (usize, f64) {
    let total: f64 = sorted.iter().map(|s| s * s).sum();
    if total <= 0.0 {
        return (sorted.len().min(1), 0.0);
    }
    let mut n = sorted.iter().take_while(|&&s| s * s / total >= cutoff).count().min(chi_max);
    let first = n;
    while n > 0 && n < sorted.len() && sorted[n - 1] - sorted[n] <= DEGENERACY_WINDOW * sorted[n - 1] {
        n -= 1;
    }
    if n == 0 {
        n = first.max(1);
    }
    let kept: f64 = sorted[..n].iter().map(|s| s * s).sum();
    (n, ((total - kept) / total).max(0.0))
}

#[derive(Clone, Debug, Default)]
struct Env {
    /// (mpo index, bra charge, ket charge) -> bra x ket block
    blocks: BTreeMap<(usize, Charge, Charge), Block>,
}

impl Env {
    fn boundary(q: Charge) -> Self {
        Env { blocks: BTreeMap::from([((0, q, q), Block::from_element(1, 1, 1.0))]) }
    }

    fn by_ket(&self) -> HashMap<(usize, Charge), Vec<(Charge, &Block)>> {
        let mut m: HashMap<(usize, Charge), Vec<(Charge, &Block)>> = HashMap::new();
        for (&(a, bra, ket), b) in &self.blocks {
            m.entry((a, ket)).or_default().push((bra, b));
        }
        m
    }
}

fn add_block(map: &mut BTreeMap<(usize, Charge, Charge), Block>, key: (usize, Charge, Charge), v: Block) {
    match map.get_mut(&key) {
        Some(b) => *b += v,
        None => {
            map.insert(key, v);
        }
    }
}

fn extend_left(env: &Env, tensor: &SiteTensor, w: &MpoSite, phys: &[Charge]) -> Env {
    let mut out = BTreeMap::new();
    for (&(a, qb, qk), e) in &env.blocks {
        for entry in w.entries.iter().filter(|en| en.left == a) {
            for &(so, si, v) in &entry.op {
                let (Some(ab), Some(ak)) = (tensor.blocks.get(&(qb, so)), tensor.blocks.get(&(qk, si))) else {
                    continue;
                };
                let m = ab.transpose() * (e * ak) * v;
                add_block(&mut out, (entry.right, qb + phys[so], qk + phys[si]), m);
            }
        }
    }
    Env { blocks: out }
}

fn extend_right(env: &Env, tensor: &SiteTensor, w: &MpoSite, phys: &[Charge]) -> Env {
    let mut out = BTreeMap::new();
    for (&(b, qb, qk), f) in &env.blocks {
        for entry in w.entries.iter().filter(|en| en.right == b) {
            for &(so, si, v) in &entry.op {
                let lb = qb - phys[so];
                let lk = qk - phys[si];
                let (Some(bb), Some(bk)) = (tensor.blocks.get(&(lb, so)), tensor.blocks.get(&(lk, si))) else {
                    continue;
                };
                let m = (bb * f) * bk.transpose() * v;
                add_block(&mut out, (entry.left, lb, lk), m);
            }
        }
    }
    Env { blocks: out }
}

/// Block layout of a two-site wavefunction, keyed by (left charge, σ1, σ2).
struct ThetaLayout {
    keys: Vec<(Charge, usize, usize)>,
    dims: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    total: usize,
    index: HashMap<(Charge, usize, usize), usize>,
}

impl ThetaLayout {
    fn new(left: &BondSpace, right: &BondSpace, phys: &[Charge]) -> Self {
        let d = phys.len();
        let mut keys = Vec::new();
        let mut dims = Vec::new();
        let mut offsets = Vec::new();
        let mut total = 0;
        for (ql, dl) in left.charges() {
            for s1 in 0..d {
                for s2 in 0..d {
                    if let Some(dr) = right.get(ql + phys[s1] + phys[s2]) {
                        keys.push((ql, s1, s2));
                        dims.push((dl, dr));
                        offsets.push(total);
                        total += dl * dr;
                    }
                }
            }
        }
        let index = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        ThetaLayout { keys, dims, offsets, total, index }
    }

    fn view<'a>(&self, data: &'a [f64], i: usize) -> DMatrixView<'a, f64> {
        let (r, c) = self.dims[i];
        DMatrixView::from_slice(&data[self.offsets[i]..self.offsets[i] + r * c], r, c)
    }
}

struct RightTask {
    /// Transposed right-environment block (ket x bra).
    er_t: Block,
    outs: Vec<(usize, f64)>,
}

struct LeftTask<'a> {
    el: &'a Block,
    rights: Vec<RightTask>,
}

/// Effective two-site Hamiltonian as a list of block contractions.
struct EffectiveHamiltonian<'a> {
    layout: &'a ThetaLayout,
    tasks: Vec<Vec<LeftTask<'a>>>,
}

impl<'a> EffectiveHamiltonian<'a> {
    fn new(
        layout: &'a ThetaLayout,
        left: &'a Env,
        right: &'a Env,
        w1: &MpoSite,
        w2: &MpoSite,
        phys: &[Charge],
    ) -> Self {
        // (σ1, σ2) -> (a, c) -> (σ1', σ2') -> value
        let mut combined: BTreeMap<(usize, usize), BTreeMap<(usize, usize), BTreeMap<(usize, usize), f64>>> =
            BTreeMap::new();
        for e1 in &w1.entries {
            for e2 in w2.entries.iter().filter(|e| e.left == e1.right) {
                for &(o1, i1, v1) in &e1.op {
                    for &(o2, i2, v2) in &e2.op {
                        *combined
                            .entry((i1, i2))
                            .or_default()
                            .entry((e1.left, e2.right))
                            .or_default()
                            .entry((o1, o2))
                            .or_insert(0.0) += v1 * v2;
                    }
                }
            }
        }
        let el_by_ket = left.by_ket();
        let er_by_ket = right.by_ket();
        let mut tasks = Vec::with_capacity(layout.keys.len());
        for &(ql, s1, s2) in &layout.keys {
            let qr = ql + phys[s1] + phys[s2];
            let mut lefts = Vec::new();
            if let Some(ops) = combined.get(&(s1, s2)) {
                let mut by_a: BTreeMap<usize, Vec<(usize, &BTreeMap<(usize, usize), f64>)>> = BTreeMap::new();
                for (&(a, c), outs) in ops {
                    by_a.entry(a).or_default().push((c, outs));
                }
                for (a, cs) in by_a {
                    let Some(els) = el_by_ket.get(&(a, ql)) else { continue };
                    for &(lbra, el) in els {
                        let mut rights = Vec::new();
                        for &(c, outs) in &cs {
                            let Some(ers) = er_by_ket.get(&(c, qr)) else { continue };
                            for &(rbra, er) in ers {
                                let list: Vec<(usize, f64)> = outs
                                    .iter()
                                    .filter(|(_, &v)| v != 0.0)
                                    .filter(|(&(o1, o2), _)| lbra + phys[o1] + phys[o2] == rbra)
                                    .filter_map(|(&(o1, o2), &v)| layout.index.get(&(lbra, o1, o2)).map(|&ob| (ob, v)))
                                    .collect();
                                if !list.is_empty() {
                                    rights.push(RightTask { er_t: er.transpose(), outs: list });
                                }
                            }
                        }
                        if !rights.is_empty() {
                            lefts.push(LeftTask { el, rights });
                        }
                    }
                }
            }
            tasks.push(lefts);
        }
        EffectiveHamiltonian { layout, tasks }
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (bi, lefts) in self.tasks.iter().enumerate() {
            let t = self.layout.view(x, bi);
            for lt in lefts {
                let m1 = lt.el * t;
                for rt in &lt.rights {
                    let m2 = &m1 * &rt.er_t;
                    for &(ob, v) in &rt.outs {
                        let off = self.layout.offsets[ob];
                        let dst = &mut y[off..off + m2.len()];
                        for (d, s) in dst.iter_mut().zip(m2.as_slice()) {
                            *d += v * s;
                        }
                    }
                }
            }
        }
    }
}

/// Splits a charge into per-site pieces spread as evenly as possible.
fn spread(total: i32, len: usize, shift: usize) -> Vec<i32> {
    let l = len as i64;
    let t = total as i64;
    (0..len)
        .map(|j| {
            let j = (j + shift) as i64;
            (((j + 1) * t).div_euclid(l) - (j * t).div_euclid(l)) as i32
        })
        .collect()
}

/// Charge-respecting product configuration: spin or particles spread evenly
/// (a Néel pattern at half filling), with the second species offset by a site.
pub fn initial_configuration(spec: &HamiltonianSpec) -> Result<Vec<usize>, SolverError> {
    let len = spec.len;
    let a = spread(spec.target.0, len, 0);
    let b = spread(spec.target.1, len, 1);
    let charges = spec.space.charges();
    (0..len)
        .map(|j| {
            let want = Charge(a[j], b[j]);
            charges.iter().position(|&q| q == want).ok_or_else(|| {
                SolverError::Sector(format!("no local state with charge {want:?} for target {:?}", spec.target))
            })
        })
        .collect()
}

struct Engine<'a> {
    spec: &'a HamiltonianSpec,
    cfg: DmrgConfig,
    mpo: Vec<MpoSite>,
    phys: Vec<Charge>,
    mps: MpsState,
    left_envs: Vec<Option<Env>>,
    right_envs: Vec<Option<Env>>,
    rng: ChaCha8Rng,
}

impl<'a> Engine<'a> {
    fn new(spec: &'a HamiltonianSpec, cfg: DmrgConfig) -> Result<Self, SolverError> {
        let config = initial_configuration(spec)?;
        let phys = spec.space.charges();
        let mps = MpsState::product(&config, &phys, spec.model_id(), spec.control_value(), spec.filling);
        let len = spec.len;
        let mut engine = Engine {
            spec,
            cfg,
            mpo: build_mpo(spec),
            phys,
            mps,
            left_envs: vec![None; len + 1],
            right_envs: vec![None; len + 1],
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        };
        engine.left_envs[0] = Some(Env::boundary(Charge::ZERO));
        engine.right_envs[len] = Some(Env::boundary(spec.target));
        for j in (2..len).rev() {
            let env = extend_right(
                engine.right_envs[j + 1].as_ref().unwrap(),
                &engine.mps.tensors[j],
                &engine.mpo[j],
                &engine.phys,
            );
            engine.right_envs[j] = Some(env);
        }
        Ok(engine)
    }

    /// Optimizes sites (j, j+1) and splits the result, leaving the center on
    /// the right site when `to_right`, else on the left one.
    fn update_pair(&mut self, j: usize, chi: usize, noise: f64, to_right: bool) -> (f64, f64) {
        let layout = ThetaLayout::new(&self.mps.bonds[j], &self.mps.bonds[j + 2], &self.phys);
        let mut start = vec![0.0; layout.total];
        for (bi, &(ql, s1, s2)) in layout.keys.iter().enumerate() {
            let qm = ql + self.phys[s1];
            if let (Some(a), Some(b)) =
                (self.mps.tensors[j].blocks.get(&(ql, s1)), self.mps.tensors[j + 1].blocks.get(&(qm, s2)))
            {
                let prod = a * b;
                let off = layout.offsets[bi];
                start[off..off + prod.len()].copy_from_slice(prod.as_slice());
            }
        }
        if noise > 0.0 {
            for v in start.iter_mut() {
                *v += noise * self.rng.random_range(-1.0..1.0);
            }
        }
        let left = self.left_envs[j].as_ref().expect("left environment");
        let right = self.right_envs[j + 2].as_ref().expect("right environment");
        let heff = EffectiveHamiltonian::new(&layout, left, right, &self.mpo[j], &self.mpo[j + 1], &self.phys);
        let lcfg = LanczosConfig { krylov_dim: self.cfg.lanczos_dim, tol: self.cfg.lanczos_tol, max_restarts: 0 };
        let result = lowest_eigenpair(|x, y| heff.apply(x, y), &start, &lcfg);
        drop(heff);
        let discarded = self.split(j, &layout, &result.vector, chi, to_right);
        (result.value, discarded)
    }

    fn split(&mut self, j: usize, layout: &ThetaLayout, theta: &[f64], chi: usize, to_right: bool) -> f64 {
        let phys = &self.phys;
        let right_bond = &self.mps.bonds[j + 2];
        // group rows (ql, s1) and columns (s2) by the middle charge
        struct Group {
            rows: Vec<((Charge, usize), usize)>,
            cols: Vec<(usize, usize)>,
        }
        let mut groups: BTreeMap<Charge, Group> = BTreeMap::new();
        for (bi, &(ql, s1, s2)) in layout.keys.iter().enumerate() {
            let qm = ql + phys[s1];
            let g = groups.entry(qm).or_insert_with(|| Group { rows: Vec::new(), cols: Vec::new() });
            let (dl, dr) = layout.dims[bi];
            if !g.rows.iter().any(|r| r.0 == (ql, s1)) {
                g.rows.push(((ql, s1), dl));
            }
            if !g.cols.iter().any(|c| c.0 == s2) {
                g.cols.push((s2, dr));
            }
        }
        let mut factored: Vec<(Charge, Block, Vec<f64>, Block)> = Vec::new();
        for (qm, g) in groups.iter_mut() {
            g.rows.sort();
            g.cols.sort();
            let nr: usize = g.rows.iter().map(|r| r.1).sum();
            let nc: usize = g.cols.iter().map(|c| c.1).sum();
            let mut m = Block::zeros(nr, nc);
            let mut roff = 0;
            for &((ql, s1), dl) in &g.rows {
                let mut coff = 0;
                for &(s2, dr) in &g.cols {
                    if let Some(&bi) = layout.index.get(&(ql, s1, s2)) {
                        m.view_mut((roff, coff), (dl, dr)).copy_from(&layout.view(theta, bi));
                    }
                    coff += dr;
                }
                roff += dl;
            }
            let (u, s, vt) = svd_sorted(&m);
            factored.push((*qm, u, s, vt));
        }
        let mut all: Vec<(f64, usize, usize)> = Vec::new();
        for (gi, f) in factored.iter().enumerate() {
            all.extend(f.2.iter().enumerate().map(|(i, &s)| (s, gi, i)));
        }
        all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let sorted: Vec<f64> = all.iter().map(|x| x.0).collect();
        let (keep, discarded) = truncation_rank(&sorted, chi, self.cfg.svd_cutoff);
        let mut kept_per_group = vec![0usize; factored.len()];
        for x in &all[..keep] {
            kept_per_group[x.1] += 1;
        }
        let kept_norm = sorted[..keep].iter().map(|s| s * s).sum::<f64>().sqrt();

        let mut left = SiteTensor::default();
        let mut right = SiteTensor::default();
        let mut mid = BondSpace::default();
        for (gi, (qm, u, s, vt)) in factored.iter().enumerate() {
            let k = kept_per_group[gi];
            if k == 0 {
                continue;
            }
            mid.sectors.insert(*qm, k);
            let g = &groups[qm];
            let scale: Vec<f64> = s[..k].iter().map(|v| v / kept_norm).collect();
            let mut roff = 0;
            for &(key, dl) in &g.rows {
                let mut blk = u.view((roff, 0), (dl, k)).into_owned();
                if !to_right {
                    for c in 0..k {
                        blk.column_mut(c).scale_mut(scale[c]);
                    }
                }
                left.blocks.insert(key, blk);
                roff += dl;
            }
            let mut coff = 0;
            for &(s2, dr) in &g.cols {
                if right_bond.get(*qm + phys[s2]).is_some() {
                    let mut blk = vt.view((0, coff), (k, dr)).into_owned();
                    if to_right {
                        for r in 0..k {
                            blk.row_mut(r).scale_mut(scale[r]);
                        }
                    }
                    right.blocks.insert((*qm, s2), blk);
                }
                coff += dr;
            }
        }
        self.mps.tensors[j] = left;
        self.mps.tensors[j + 1] = right;
        self.mps.bonds[j + 1] = mid;
        discarded
    }

    fn sweep(&mut self, chi: usize, noise: f64) -> (f64, f64) {
        let len = self.spec.len;
        let mut energy = f64::NAN;
        let mut discarded = 0.0;
        for j in 0..len - 1 {
            let (e, d) = self.update_pair(j, chi, noise, true);
            energy = e;
            discarded += d;
            let env = extend_left(self.left_envs[j].as_ref().unwrap(), &self.mps.tensors[j], &self.mpo[j], &self.phys);
            self.left_envs[j + 1] = Some(env);
            self.mps.center = j + 1;
        }
        for j in (0..len - 1).rev() {
            let (e, d) = self.update_pair(j, chi, noise, false);
            energy = e;
            discarded += d;
            let env = extend_right(
                self.right_envs[j + 2].as_ref().unwrap(),
                &self.mps.tensors[j + 1],
                &self.mpo[j + 1],
                &self.phys,
            );
            self.right_envs[j + 1] = Some(env);
            self.mps.center = j;
        }
        (energy, discarded)
    }
}

/// Ground state of `spec` in its target sector as a mixed-canonical MPS with
/// the center on site 0.
pub fn dmrg_ground_state(spec: &HamiltonianSpec, cfg: &DmrgConfig) -> Result<MpsState, SolverError> {
    cfg.validate()?;
    let mut engine = Engine::new(spec, *cfg)?;
    let warm_chi = cfg.warmup_chi.min(cfg.chi_max).max(1);
    for _ in 0..cfg.warmup_sweeps {
        let (e, d) = engine.sweep(warm_chi, cfg.warmup_noise);
        engine.mps.sweep_energies.push(e);
        engine.mps.truncation_error = d;
    }
    let mut previous = f64::INFINITY;
    let mut converged = false;
    for sweep in 0..cfg.max_sweeps {
        let (e, d) = engine.sweep(cfg.chi_max, 0.0);
        engine.mps.sweep_energies.push(e);
        engine.mps.truncation_error = d;
        if e > previous + cfg.energy_tol {
            log::warn!("energy rose across sweep {sweep}: {previous} -> {e}");
        }
        if (previous - e).abs() < cfg.energy_tol {
            converged = true;
            previous = e;
            break;
        }
        previous = e;
    }
    engine.mps.energy = previous;
    engine.mps.converged = converged;
    if !converged {
        log::warn!(
            "DMRG for {} L={} at {} did not reach energy_tol {} in {} sweeps",
            spec.model_id(),
            spec.len,
            spec.control_value(),
            cfg.energy_tol,
            cfg.max_sweeps
        );
    }
    Ok(engine.mps)
}
