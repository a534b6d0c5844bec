//! Restarted GMRES, and the gauge-deflated solve for the singular cell operator.

use crate::error::{Error, Result};
use crate::torus::DiscreteOperatorPair;

#[derive(Clone, Copy, Debug)]
pub struct GmresOptions {
    pub restart: usize,
    pub max_cycles: usize,
}

impl Default for GmresOptions {
    fn default() -> Self {
        Self {
            restart: 80,
            max_cycles: 40,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// One GMRES(m) cycle from `x`, stopping early once the estimated 2-norm
/// residual drops below `target`. Returns the number of Arnoldi steps taken.
fn gmres_cycle(
    apply: &dyn Fn(&[f64]) -> Vec<f64>,
    rhs: &[f64],
    x: &mut [f64],
    restart: usize,
    target: f64,
) -> usize {
    let n = rhs.len();
    let ax = apply(x);
    let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let beta = norm(&r);
    if beta <= target || beta == 0.0 {
        return 0;
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(restart + 1);
    basis.push(r.iter().map(|v| v / beta).collect());
    let mut hess = vec![vec![0.0; restart]; restart + 1];
    let mut cs = vec![0.0; restart];
    let mut sn = vec![0.0; restart];
    let mut g = vec![0.0; restart + 1];
    g[0] = beta;
    let mut steps = 0;
    for k in 0..restart {
        let mut w = apply(&basis[k]);
        for (i, v) in basis.iter().enumerate() {
            let h = dot(&w, v);
            hess[i][k] = h;
            for (wj, vj) in w.iter_mut().zip(v) {
                *wj -= h * vj;
            }
        }
        // Second Gram-Schmidt pass keeps the basis orthogonal at tight tolerances.
        for (i, v) in basis.iter().enumerate() {
            let h = dot(&w, v);
            hess[i][k] += h;
            for (wj, vj) in w.iter_mut().zip(v) {
                *wj -= h * vj;
            }
        }
        let wn = norm(&w);
        hess[k + 1][k] = wn;
        for i in 0..k {
            let t = cs[i] * hess[i][k] + sn[i] * hess[i + 1][k];
            hess[i + 1][k] = -sn[i] * hess[i][k] + cs[i] * hess[i + 1][k];
            hess[i][k] = t;
        }
        let denom = (hess[k][k] * hess[k][k] + hess[k + 1][k] * hess[k + 1][k]).sqrt();
        if denom == 0.0 {
            break;
        }
        cs[k] = hess[k][k] / denom;
        sn[k] = hess[k + 1][k] / denom;
        hess[k][k] = denom;
        hess[k + 1][k] = 0.0;
        g[k + 1] = -sn[k] * g[k];
        g[k] *= cs[k];
        steps = k + 1;
        if g[k + 1].abs() <= target || wn == 0.0 {
            break;
        }
        basis.push(w.iter().map(|v| v / wn).collect());
    }
    let mut y = vec![0.0; steps];
    for i in (0..steps).rev() {
        let mut s = g[i];
        for j in i + 1..steps {
            s -= hess[i][j] * y[j];
        }
        y[i] = s / hess[i][i];
    }
    for (i, yi) in y.iter().enumerate() {
        for (xj, vj) in x.iter_mut().zip(&basis[i]).take(n) {
            *xj += yi * vj;
        }
    }
    steps
}

/// Result of a gauge-fixed corrector solve.
#[derive(Clone, Debug)]
pub struct GaugedSolution {
    pub solution: Vec<f64>,
    /// ||A x - rhs||_inf
    pub residual: f64,
    pub iterations: usize,
}

/// Solves A x = rhs with quadrature(x) = 0, where A = K - G has the constants
/// as kernel and `rhs` lies in its range.
///
/// The rank-one deflation A - 1 w^T (w the quadrature weights) is nonsingular,
/// and its solution for a consistent right-hand side automatically has zero mean.
/// GMRES runs on the deflated operator right-preconditioned by 1/G.
pub fn solve_gauged(
    ops: &DiscreteOperatorPair,
    rhs: &[f64],
    tol: f64,
    opts: &GmresOptions,
) -> Result<GaugedSolution> {
    let grid = ops.grid().clone();
    let g = ops.g_diag().to_vec();
    let deflated = |y: &[f64]| -> Vec<f64> {
        let x: Vec<f64> = y.iter().zip(&g).map(|(v, gi)| v / gi).collect();
        let mean = grid.quadrature(&x);
        let mut out = ops.apply_a(&x);
        for o in out.iter_mut() {
            *o -= mean;
        }
        out
    };
    let n = rhs.len();
    let mut y = vec![0.0; n];
    let mut iterations = 0;
    let mut last = f64::INFINITY;
    let finish = |y: &[f64]| -> (Vec<f64>, f64) {
        let mut x: Vec<f64> = y.iter().zip(&g).map(|(v, gi)| v / gi).collect();
        let mean = grid.quadrature(&x);
        for v in x.iter_mut() {
            *v -= mean;
        }
        let ax = ops.apply_a(&x);
        let res = inf_norm(&ax.iter().zip(rhs).map(|(a, b)| a - b).collect::<Vec<_>>());
        (x, res)
    };
    for _ in 0..opts.max_cycles {
        iterations += gmres_cycle(&deflated, rhs, &mut y, opts.restart, 0.05 * tol);
        let (x, residual) = finish(&y);
        if residual <= tol {
            return Ok(GaugedSolution {
                solution: x,
                residual,
                iterations,
            });
        }
        if residual > 0.999 * last {
            return Err(Error::NonConvergence {
                what: "corrector Krylov solve",
                iterations,
                residual,
            });
        }
        last = residual;
    }
    Err(Error::NonConvergence {
        what: "corrector Krylov solve",
        iterations,
        residual: last,
    })
}
