//! Symbolic nearest-neighbour lattice Hamiltonians with U(1) charge bookkeeping.
//!
//! A [`HamiltonianSpec`] is a list of one- and two-site terms written in terms
//! of named local operators. Dense local matrices are produced on demand by the
//! [`LocalSpace`], so the same description feeds the exact-diagonalization and
//! the DMRG backends. All chains use open boundaries.

use std::fmt;
use std::ops::{Add, Neg, Sub};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid chain length {0}: need at least 2 sites")]
    InvalidSize(usize),
    #[error("occupation cutoff n_max = {0} is too small: need n_max >= 2")]
    Truncation(usize),
    #[error("two-species model needs an even chain length for half filling, got {0}")]
    OddLength(usize),
    #[error("invalid coupling: {0}")]
    InvalidCoupling(String),
}

/// Abelian charge with up to two U(1) components. Single-charge models leave
/// the second component at zero.
#[derive(
    Copy, Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct Charge(pub i32, pub i32);

impl Charge {
    pub const ZERO: Charge = Charge(0, 0);

    pub fn single(n: i32) -> Self {
        Charge(n, 0)
    }
}

impl Add for Charge {
    type Output = Charge;
    fn add(self, rhs: Charge) -> Charge {
        Charge(self.0 + rhs.0, self.1 + rhs.1)
    }
}

impl Sub for Charge {
    type Output = Charge;
    fn sub(self, rhs: Charge) -> Charge {
        Charge(self.0 - rhs.0, self.1 - rhs.1)
    }
}

impl Neg for Charge {
    type Output = Charge;
    fn neg(self) -> Charge {
        Charge(-self.0, -self.1)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelId {
    Xxz,
    Bh,
    Bh2s,
}

impl ModelId {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelId::Xxz => "xxz",
            ModelId::Bh => "bh",
            ModelId::Bh2s => "bh2s",
        }
    }

    /// Number of conserved U(1) charges.
    pub fn charge_arity(&self) -> usize {
        match self {
            ModelId::Bh2s => 2,
            _ => 1,
        }
    }

    /// Name of the control parameter scanned across the phase diagram.
    pub fn control_name(&self) -> &'static str {
        match self {
            ModelId::Xxz => "delta",
            ModelId::Bh => "u",
            ModelId::Bh2s => "u_ab",
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "xxz" => Ok(ModelId::Xxz),
            "bh" => Ok(ModelId::Bh),
            "bh2s" => Ok(ModelId::Bh2s),
            other => Err(format!("unknown model '{other}' (expected xxz, bh or bh2s)")),
        }
    }
}

/// Which boson species an operator acts on.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Flavor {
    Single,
    A,
    B,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum LocalOp {
    Id,
    Sp,
    Sm,
    Sz,
    Bdag(Flavor),
    B(Flavor),
    N(Flavor),
    /// n(n-1)
    Pair(Flavor),
    /// n_A n_B
    NaNb,
}

impl LocalOp {
    pub fn label(&self) -> String {
        let (base, flavor) = match self {
            LocalOp::Id => return "Id".into(),
            LocalOp::Sp => return "Sp".into(),
            LocalOp::Sm => return "Sm".into(),
            LocalOp::Sz => return "Sz".into(),
            LocalOp::NaNb => return "nA_nB".into(),
            LocalOp::Bdag(f) => ("bdag", f),
            LocalOp::B(f) => ("b", f),
            LocalOp::N(f) => ("n", f),
            LocalOp::Pair(f) => ("nn1", f),
        };
        match flavor {
            Flavor::Single => base.to_string(),
            Flavor::A => format!("{base}_A"),
            Flavor::B => format!("{base}_B"),
        }
    }

    /// Hermitian conjugate (all operators here are real).
    pub fn adjoint(&self) -> LocalOp {
        match *self {
            LocalOp::Sp => LocalOp::Sm,
            LocalOp::Sm => LocalOp::Sp,
            LocalOp::Bdag(f) => LocalOp::B(f),
            LocalOp::B(f) => LocalOp::Bdag(f),
            other => other,
        }
    }
}

/// Single-site Hilbert space of a model.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocalSpace {
    /// Basis {|down>, |up>}; charge = number of up spins.
    SpinHalf,
    /// Basis {|0>, ..., |n_max>}; charge = occupation.
    Boson { n_max: usize },
    /// Basis |n_A, n_B> with index n_A * (n_max + 1) + n_B; charge = (n_A, n_B).
    TwoBoson { n_max: usize },
}

impl LocalSpace {
    pub fn dim(&self) -> usize {
        match *self {
            LocalSpace::SpinHalf => 2,
            LocalSpace::Boson { n_max } => n_max + 1,
            LocalSpace::TwoBoson { n_max } => (n_max + 1) * (n_max + 1),
        }
    }

    pub fn charge(&self, state: usize) -> Charge {
        match *self {
            LocalSpace::SpinHalf => Charge::single(state as i32),
            LocalSpace::Boson { .. } => Charge::single(state as i32),
            LocalSpace::TwoBoson { n_max } => {
                Charge((state / (n_max + 1)) as i32, (state % (n_max + 1)) as i32)
            }
        }
    }

    pub fn charges(&self) -> Vec<Charge> {
        (0..self.dim()).map(|s| self.charge(s)).collect()
    }

    /// Dense matrix of a local operator, `m[(out, in)]`.
    ///
    /// Panics if the operator does not act on this space.
    pub fn matrix(&self, op: LocalOp) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        match (*self, op) {
            (_, LocalOp::Id) => m.fill_with_identity(),
            (LocalSpace::SpinHalf, LocalOp::Sp) => m[(1, 0)] = 1.0,
            (LocalSpace::SpinHalf, LocalOp::Sm) => m[(0, 1)] = 1.0,
            (LocalSpace::SpinHalf, LocalOp::Sz) => {
                m[(0, 0)] = -0.5;
                m[(1, 1)] = 0.5;
            }
            (LocalSpace::Boson { n_max }, op) => {
                let flavor_ok = |f: Flavor| f == Flavor::Single;
                for n in 0..=n_max {
                    let nf = n as f64;
                    match op {
                        LocalOp::Bdag(f) if flavor_ok(f) && n < n_max => {
                            m[(n + 1, n)] = (nf + 1.0).sqrt()
                        }
                        LocalOp::B(f) if flavor_ok(f) && n > 0 => m[(n - 1, n)] = nf.sqrt(),
                        LocalOp::N(f) if flavor_ok(f) => m[(n, n)] = nf,
                        LocalOp::Pair(f) if flavor_ok(f) => m[(n, n)] = nf * (nf - 1.0),
                        LocalOp::Bdag(f) | LocalOp::B(f) if flavor_ok(f) => {}
                        _ => panic!("operator {} does not act on a boson site", op.label()),
                    }
                }
            }
            (LocalSpace::TwoBoson { n_max }, op) => {
                let w = n_max + 1;
                for na in 0..=n_max {
                    for nb in 0..=n_max {
                        let idx = na * w + nb;
                        let (n_self, shift_a) = match op {
                            LocalOp::Bdag(Flavor::A)
                            | LocalOp::B(Flavor::A)
                            | LocalOp::N(Flavor::A)
                            | LocalOp::Pair(Flavor::A) => (na, true),
                            LocalOp::Bdag(Flavor::B)
                            | LocalOp::B(Flavor::B)
                            | LocalOp::N(Flavor::B)
                            | LocalOp::Pair(Flavor::B) => (nb, false),
                            LocalOp::NaNb => {
                                m[(idx, idx)] = (na * nb) as f64;
                                continue;
                            }
                            _ => panic!("operator {} does not act on a two-boson site", op.label()),
                        };
                        let nf = n_self as f64;
                        let step = if shift_a { w } else { 1 };
                        match op {
                            LocalOp::Bdag(_) if n_self < n_max => {
                                m[(idx + step, idx)] = (nf + 1.0).sqrt()
                            }
                            LocalOp::B(_) if n_self > 0 => m[(idx - step, idx)] = nf.sqrt(),
                            LocalOp::N(_) => m[(idx, idx)] = nf,
                            LocalOp::Pair(_) => m[(idx, idx)] = nf * (nf - 1.0),
                            _ => {}
                        }
                    }
                }
            }
            (space, op) => panic!("operator {} does not act on {space:?}", op.label()),
        }
        m
    }
}

/// One local term: `coefficient * ops[0]_{sites[0]} (* ops[1]_{sites[1]})`,
/// plus its hermitian conjugate when `plus_hc` is set.
#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub sites: Vec<usize>,
    pub ops: Vec<LocalOp>,
    pub coefficient: f64,
    pub plus_hc: bool,
}

impl Term {
    fn onsite(site: usize, op: LocalOp, coefficient: f64) -> Self {
        Term { sites: vec![site], ops: vec![op], coefficient, plus_hc: false }
    }

    fn bond(sites: [usize; 2], ops: [LocalOp; 2], coefficient: f64, plus_hc: bool) -> Self {
        Term { sites: sites.to_vec(), ops: ops.to_vec(), coefficient, plus_hc }
    }

    /// Expands the term into plain products ordered by site: each item is
    /// `(first_site, [op on first_site, op on first_site + 1], coefficient)`
    /// or a single on-site product with `None` in the second slot.
    pub fn expand(&self) -> Vec<(usize, LocalOp, Option<LocalOp>, f64)> {
        let mut out = Vec::new();
        let mut push = |sites: &[usize], ops: &[LocalOp]| match sites.len() {
            1 => out.push((sites[0], ops[0], None, self.coefficient)),
            2 => {
                let (lo, hi) = if sites[0] < sites[1] { (0, 1) } else { (1, 0) };
                out.push((sites[lo], ops[lo], Some(ops[hi]), self.coefficient));
            }
            _ => unreachable!("terms act on one or two sites"),
        };
        push(&self.sites, &self.ops);
        if self.plus_hc {
            let adj: Vec<LocalOp> = self.ops.iter().map(LocalOp::adjoint).collect();
            push(&self.sites, &adj);
        }
        out
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XxzParams {
    pub j: f64,
    /// Anisotropy Δ/J.
    pub delta: f64,
}

impl Default for XxzParams {
    fn default() -> Self {
        XxzParams { j: 1.0, delta: 0.0 }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BhParams {
    pub j: f64,
    /// On-site repulsion in units of J.
    pub u: f64,
    pub n_max: usize,
}

impl Default for BhParams {
    fn default() -> Self {
        BhParams { j: 1.0, u: 0.0, n_max: 4 }
    }
}

/// Z2-symmetric two-species mixture: t_A = t_B = t, U_A = U_B = u.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bh2sParams {
    pub t: f64,
    pub u: f64,
    /// Inter-species coupling in units of U.
    pub u_ab: f64,
    pub n_max: usize,
}

impl Default for Bh2sParams {
    fn default() -> Self {
        Bh2sParams { t: 1.0, u: 10.0, u_ab: 0.0, n_max: 2 }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ModelParams {
    Xxz(XxzParams),
    Bh(BhParams),
    Bh2s(Bh2sParams),
}

impl ModelParams {
    pub fn model_id(&self) -> ModelId {
        match self {
            ModelParams::Xxz(_) => ModelId::Xxz,
            ModelParams::Bh(_) => ModelId::Bh,
            ModelParams::Bh2s(_) => ModelId::Bh2s,
        }
    }

    /// The scanned control parameter: Δ/J, U/J or U_AB/U.
    pub fn control_value(&self) -> f64 {
        match self {
            ModelParams::Xxz(p) => p.delta,
            ModelParams::Bh(p) => p.u,
            ModelParams::Bh2s(p) => p.u_ab,
        }
    }

    /// Copy of these parameters with the control parameter replaced.
    pub fn with_control(&self, value: f64) -> ModelParams {
        match *self {
            ModelParams::Xxz(p) => ModelParams::Xxz(XxzParams { delta: value, ..p }),
            ModelParams::Bh(p) => ModelParams::Bh(BhParams { u: value, ..p }),
            ModelParams::Bh2s(p) => ModelParams::Bh2s(Bh2sParams { u_ab: value, ..p }),
        }
    }

    pub fn default_for(model: ModelId) -> ModelParams {
        match model {
            ModelId::Xxz => ModelParams::Xxz(XxzParams::default()),
            ModelId::Bh => ModelParams::Bh(BhParams::default()),
            ModelId::Bh2s => ModelParams::Bh2s(Bh2sParams::default()),
        }
    }

    pub fn build(&self, len: usize) -> Result<HamiltonianSpec, ModelError> {
        match self {
            ModelParams::Xxz(p) => build_xxz(len, p),
            ModelParams::Bh(p) => build_bh(len, p),
            ModelParams::Bh2s(p) => build_bh2s(len, p),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianSpec {
    pub params: ModelParams,
    pub len: usize,
    pub space: LocalSpace,
    pub terms: Vec<Term>,
    pub charge_names: Vec<&'static str>,
    /// Total charge of the ground-state search.
    pub target: Charge,
    /// Mean charge per site, per component.
    pub filling: [f64; 2],
}

impl HamiltonianSpec {
    pub fn model_id(&self) -> ModelId {
        self.params.model_id()
    }

    pub fn local_dim(&self) -> usize {
        self.space.dim()
    }

    pub fn control_value(&self) -> f64 {
        self.params.control_value()
    }

    /// Dense matrix of an expanded two-site product on a pair of sites,
    /// in the basis `s_left * d + s_right`.
    pub fn two_site_matrix(&self, left: LocalOp, right: LocalOp) -> DMatrix<f64> {
        self.space.matrix(left).kronecker(&self.space.matrix(right))
    }

    /// Whether a term (including its conjugate) maps charge eigenstates of the
    /// sites it touches onto states with the same total charge.
    pub fn term_conserves_charge(&self, term: &Term) -> bool {
        let d = self.local_dim();
        let q = self.space.charges();
        term.expand().into_iter().all(|(_, a, b, c)| match b {
            None => {
                let m = self.space.matrix(a) * c;
                (0..d).all(|i| (0..d).all(|k| m[(i, k)] == 0.0 || q[i] == q[k]))
            }
            Some(b) => {
                let m = self.two_site_matrix(a, b) * c;
                (0..d * d).all(|i| {
                    (0..d * d).all(|k| {
                        m[(i, k)] == 0.0 || q[i / d] + q[i % d] == q[k / d] + q[k % d]
                    })
                })
            }
        })
    }

    /// Left-block size and filling used to shift sector labels at `bond`.
    pub fn shift_at(&self, bond: usize) -> [f64; 2] {
        [self.filling[0] * bond as f64, self.filling[1] * bond as f64]
    }
}

fn check_len(len: usize) -> Result<(), ModelError> {
    if len < 2 {
        return Err(ModelError::InvalidSize(len));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<(), ModelError> {
    if !(v.is_finite() && v > 0.0) {
        return Err(ModelError::InvalidCoupling(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

/// Spin-1/2 XXZ chain
/// `H = -J Σ_j [ ½ (S⁺_{j+1} S⁻_j + S⁺_j S⁻_{j+1}) + Δ S^z_{j+1} S^z_j ]`
/// at zero magnetization (charge counts up spins, target L/2; odd chains use
/// the floor).
pub fn build_xxz(len: usize, p: &XxzParams) -> Result<HamiltonianSpec, ModelError> {
    check_len(len)?;
    check_positive("J", p.j)?;
    if !p.delta.is_finite() {
        return Err(ModelError::InvalidCoupling("delta must be finite".into()));
    }
    let mut terms = Vec::with_capacity(2 * (len - 1));
    for j in 0..len - 1 {
        terms.push(Term::bond([j + 1, j], [LocalOp::Sp, LocalOp::Sm], -0.5 * p.j, true));
        terms.push(Term::bond([j + 1, j], [LocalOp::Sz, LocalOp::Sz], -p.j * p.delta, false));
    }
    Ok(HamiltonianSpec {
        params: ModelParams::Xxz(*p),
        len,
        space: LocalSpace::SpinHalf,
        terms,
        charge_names: vec!["N_up"],
        target: Charge::single((len / 2) as i32),
        filling: [0.5, 0.0],
    })
}

/// Bose-Hubbard chain `H = -J Σ (b†_{j+1} b_j + h.c.) + U/2 Σ n_j (n_j - 1)`
/// at unit filling.
pub fn build_bh(len: usize, p: &BhParams) -> Result<HamiltonianSpec, ModelError> {
    check_len(len)?;
    if p.n_max < 2 {
        return Err(ModelError::Truncation(p.n_max));
    }
    check_positive("J", p.j)?;
    if !(p.u.is_finite() && p.u >= 0.0) {
        return Err(ModelError::InvalidCoupling(format!("U/J must be >= 0, got {}", p.u)));
    }
    let f = Flavor::Single;
    let mut terms = Vec::with_capacity(2 * len - 1);
    for j in 0..len - 1 {
        terms.push(Term::bond([j + 1, j], [LocalOp::Bdag(f), LocalOp::B(f)], -p.j, true));
    }
    for j in 0..len {
        terms.push(Term::onsite(j, LocalOp::Pair(f), 0.5 * p.u * p.j));
    }
    Ok(HamiltonianSpec {
        params: ModelParams::Bh(*p),
        len,
        space: LocalSpace::Boson { n_max: p.n_max },
        terms,
        charge_names: vec!["N"],
        target: Charge::single(len as i32),
        filling: [1.0, 0.0],
    })
}

/// Two Bose-Hubbard species coupled by `U_AB Σ n_{j,A} n_{j,B}`, each at
/// half filling.
pub fn build_bh2s(len: usize, p: &Bh2sParams) -> Result<HamiltonianSpec, ModelError> {
    check_len(len)?;
    if !len.is_multiple_of(2) {
        return Err(ModelError::OddLength(len));
    }
    if p.n_max < 2 {
        return Err(ModelError::Truncation(p.n_max));
    }
    check_positive("t", p.t)?;
    check_positive("U", p.u)?;
    if !p.u_ab.is_finite() {
        return Err(ModelError::InvalidCoupling("U_AB/U must be finite".into()));
    }
    let mut terms = Vec::with_capacity(6 * len);
    for f in [Flavor::A, Flavor::B] {
        for j in 0..len - 1 {
            terms.push(Term::bond([j + 1, j], [LocalOp::Bdag(f), LocalOp::B(f)], -p.t, true));
        }
        for j in 0..len {
            terms.push(Term::onsite(j, LocalOp::Pair(f), 0.5 * p.u));
        }
    }
    for j in 0..len {
        terms.push(Term::onsite(j, LocalOp::NaNb, p.u_ab * p.u));
    }
    let half = (len / 2) as i32;
    Ok(HamiltonianSpec {
        params: ModelParams::Bh2s(*p),
        len,
        space: LocalSpace::TwoBoson { n_max: p.n_max },
        terms,
        charge_names: vec!["N_A", "N_B"],
        target: Charge(half, half),
        filling: [0.5, 0.5],
    })
}
