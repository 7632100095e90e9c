//! Restarted Lanczos with full reorthogonalization for the lowest eigenpair of
//! a real symmetric operator given as a matrix-vector product.

use nalgebra::{DMatrix, SymmetricEigen};

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct LanczosConfig {
    /// Krylov subspace size per restart cycle.
    pub krylov_dim: usize,
    /// Residual norm `‖H x - θ x‖` below which the pair counts as converged.
    pub tol: f64,
    pub max_restarts: usize,
}

impl Default for LanczosConfig {
    fn default() -> Self {
        LanczosConfig { krylov_dim: 20, tol: 1e-12, max_restarts: 1 }
    }
}

#[derive(Clone, Debug)]
pub struct LanczosResult {
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
    pub converged: bool,
    pub matvecs: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Lowest eigenvalue and eigenvector of the tridiagonal matrix (alpha, beta).
fn tridiagonal_lowest(alpha: &[f64], beta: &[f64]) -> (f64, Vec<f64>) {
    let m = alpha.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    (eig.eigenvalues[imin], eig.eigenvectors.column(imin).iter().copied().collect())
}

/// Lowest eigenpair of the operator `matvec` starting from `start`.
///
/// `matvec(x, y)` must overwrite `y` with `H x`. A zero start vector is
/// replaced by a deterministic non-degenerate one. The result is returned
/// even when the residual tolerance was not reached; `converged` reports it.
pub fn lowest_eigenpair<F>(mut matvec: F, start: &[f64], cfg: &LanczosConfig) -> LanczosResult
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = start.len();
    assert!(n > 0, "empty Lanczos problem");
    let mut x = start.to_vec();
    let mut nx = norm(&x);
    if !(nx > 0.0 && nx.is_finite()) {
        x = (0..n).map(|i| 1.0 + (i as f64 * 0.618_033_988_75).fract()).collect();
        nx = norm(&x);
    }
    x.iter_mut().for_each(|v| *v /= nx);

    let mut matvecs = 0;
    let mut best = LanczosResult {
        value: f64::INFINITY,
        vector: x.clone(),
        residual: f64::INFINITY,
        converged: false,
        matvecs: 0,
    };
    let m_max = cfg.krylov_dim.max(1).min(n);
    let mut w = vec![0.0; n];

    for _ in 0..=cfg.max_restarts {
        let mut basis: Vec<Vec<f64>> = vec![x.clone()];
        let mut alpha = Vec::with_capacity(m_max);
        let mut beta: Vec<f64> = Vec::with_capacity(m_max);
        let mut ritz = (f64::INFINITY, vec![1.0]);
        let mut residual = f64::INFINITY;
        for j in 0..m_max {
            matvec(&basis[j], &mut w);
            matvecs += 1;
            let a = dot(&basis[j], &w);
            alpha.push(a);
            axpy(-a, &basis[j], &mut w);
            if j > 0 {
                axpy(-beta[j - 1], &basis[j - 1], &mut w);
            }
            // two passes of classical Gram-Schmidt against the whole basis
            for _ in 0..2 {
                for v in &basis {
                    let c = dot(v, &w);
                    axpy(-c, v, &mut w);
                }
            }
            let b = norm(&w);
            ritz = tridiagonal_lowest(&alpha, &beta);
            residual = (b * ritz.1[j]).abs();
            let exhausted = b <= 1e-14 * alpha.iter().map(|v| v.abs()).fold(1.0, f64::max);
            if residual <= cfg.tol || exhausted || j + 1 == m_max {
                if exhausted {
                    residual = 0.0;
                }
                break;
            }
            beta.push(b);
            basis.push(w.iter().map(|v| v / b).collect());
        }
        let mut y = vec![0.0; n];
        for (c, v) in ritz.1.iter().zip(&basis) {
            axpy(*c, v, &mut y);
        }
        let ny = norm(&y);
        y.iter_mut().for_each(|v| *v /= ny);
        best = LanczosResult {
            value: ritz.0,
            vector: y.clone(),
            residual,
            converged: residual <= cfg.tol,
            matvecs,
        };
        if best.converged {
            break;
        }
        x = y;
    }
    best.matvecs = matvecs;
    best
}
