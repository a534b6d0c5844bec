//! Cell problems on the torus: ground state v0, drift b, correctors kappa1 and
//! kappa2, the effective matrix Theta, and the flux matrix I.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{CoefficientSpec, JumpDensity};
use crate::krylov::{solve_gauged, GmresOptions};
use crate::torus::{
    assemble_operators, periodize_weighted, AssemblyOptions, DiscreteOperatorPair,
    PeriodizedKernel, TorusGrid, Weight, DEFAULT_PERIODIZATION_TOL,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "defaults::ground_state")]
    pub ground_state: f64,
    #[serde(default = "defaults::corrector")]
    pub corrector: f64,
    #[serde(default = "defaults::solvability")]
    pub solvability: f64,
    #[serde(default = "defaults::periodization")]
    pub periodization: f64,
    #[serde(default = "defaults::max_ground_state_iter")]
    pub max_ground_state_iter: usize,
}

mod defaults {
    pub fn ground_state() -> f64 {
        1e-12
    }
    pub fn corrector() -> f64 {
        1e-10
    }
    pub fn solvability() -> f64 {
        1e-10
    }
    pub fn periodization() -> f64 {
        super::DEFAULT_PERIODIZATION_TOL
    }
    pub fn max_ground_state_iter() -> usize {
        100_000
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            ground_state: defaults::ground_state(),
            corrector: defaults::corrector(),
            solvability: defaults::solvability(),
            periodization: defaults::periodization(),
            max_ground_state_iter: defaults::max_ground_state_iter(),
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.ground_state,
            self.corrector,
            self.solvability,
            self.periodization,
        ];
        if all.iter().all(|t| t.is_finite() && *t > 0.0) && self.max_ground_state_iter > 0 {
            Ok(())
        } else {
            Err(Error::Config("tolerances must be positive".into()))
        }
    }
}

/// First- and second-moment periodizations â^(i), â^(ij) of a kernel.
#[derive(Clone, Debug)]
pub struct WeightedKernels {
    pub dim: usize,
    pub first: Vec<PeriodizedKernel>,
    /// Row-major d x d; entry (i, j) and (j, i) are the same lattice sum.
    pub second: Vec<PeriodizedKernel>,
}

impl WeightedKernels {
    pub fn build(density: &dyn JumpDensity, grid: &TorusGrid, tol: f64) -> Result<Self> {
        let d = grid.dim;
        let first = (0..d)
            .map(|i| periodize_weighted(density, Weight::First(i), grid, tol))
            .collect::<Result<Vec<_>>>()?;
        let mut second: Vec<Option<PeriodizedKernel>> = vec![None; d * d];
        for i in 0..d {
            for j in i..d {
                let k = periodize_weighted(density, Weight::Second(i, j), grid, tol)?;
                second[j * d + i] = Some(k.clone());
                second[i * d + j] = Some(k);
            }
        }
        Ok(Self {
            dim: d,
            first,
            second: second.into_iter().map(Option::unwrap).collect(),
        })
    }

    pub fn second(&self, i: usize, j: usize) -> &PeriodizedKernel {
        &self.second[i * self.dim + j]
    }
}

/// Everything the cell pipeline needs for one kernel/coefficient/grid triple.
#[derive(Clone, Debug)]
pub struct CellProblem {
    pub grid: TorusGrid,
    pub a_hat: PeriodizedKernel,
    pub weighted: WeightedKernels,
    pub ops: DiscreteOperatorPair,
}

impl CellProblem {
    pub fn new(
        kernel: &dyn JumpDensity,
        mu: &CoefficientSpec,
        grid: &TorusGrid,
        assembly: &AssemblyOptions,
        periodization_tol: f64,
    ) -> Result<Self> {
        let a_hat = periodize_weighted(kernel, Weight::Mass, grid, periodization_tol)?;
        let ops = assemble_operators(&a_hat, mu, grid, assembly)?;
        let weighted = WeightedKernels::build(kernel, grid, periodization_tol)?;
        Ok(Self {
            grid: grid.clone(),
            a_hat,
            weighted,
            ops,
        })
    }
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Positive null vector of (G - K)*, normalized to quadrature 1, by the fixed
/// point v <- K* v / G. Returns (v0, ||K* v0 - G v0||_inf).
pub fn ground_state(
    ops: &DiscreteOperatorPair,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, f64)> {
    let grid = ops.grid();
    let g = ops.g_diag();
    let n = ops.len();
    let mut v = vec![1.0; n];
    let mut residual = f64::INFINITY;
    for iter in 0..max_iter {
        let u = ops.apply_adjoint(&v);
        residual = u
            .iter()
            .zip(g)
            .zip(&v)
            .fold(0.0_f64, |m, ((ui, gi), vi)| m.max((ui - gi * vi).abs()));
        let mut w: Vec<f64> = u.iter().zip(g).map(|(ui, gi)| ui / gi).collect();
        let mass = grid.quadrature(&w);
        for wi in w.iter_mut() {
            *wi /= mass;
        }
        let update = w
            .iter()
            .zip(&v)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        let converged = residual <= tol && update <= tol;
        if !converged {
            v = w;
            continue;
        }
        log::debug!("ground state converged after {iter} sweeps (residual {residual:e})");
        if let Some(bad) = v.iter().find(|x| !(**x > 0.0)) {
            return Err(Error::Discretization(format!(
                "ground state has a nonpositive entry ({bad:e})"
            )));
        }
        return Ok((v, residual));
    }
    Err(Error::NonConvergence {
        what: "ground state iteration",
        iterations: max_iter,
        residual,
    })
}

/// psi0 = G v0 normalized to unit L2 norm on the grid.
pub fn psi0(ops: &DiscreteOperatorPair, v0: &[f64]) -> Vec<f64> {
    let psi: Vec<f64> = v0.iter().zip(ops.g_diag()).map(|(v, g)| v * g).collect();
    let norm = ops.grid().inner(&psi, &psi).sqrt();
    psi.into_iter().map(|p| p / norm).collect()
}

#[derive(Clone, Debug)]
pub struct DriftRhs {
    pub b: Vec<f64>,
    pub f: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    /// max_i |quadrature(h^i v0)|
    pub solvability: f64,
}

/// f^i = K^(i) 1, b^i = quadrature(f^i v0), h = f - b.
pub fn drift_and_rhs(
    ops: &DiscreteOperatorPair,
    weighted: &WeightedKernels,
    v0: &[f64],
) -> DriftRhs {
    let grid = ops.grid();
    let ones = vec![1.0; ops.len()];
    let f: Vec<Vec<f64>> = weighted
        .first
        .iter()
        .map(|k| ops.apply_weighted(k, &ones))
        .collect();
    let b: Vec<f64> = f.iter().map(|fi| grid.inner(fi, v0)).collect();
    let h: Vec<Vec<f64>> = f
        .iter()
        .zip(&b)
        .map(|(fi, bi)| fi.iter().map(|v| v - bi).collect())
        .collect();
    let solvability = h
        .iter()
        .map(|hi| grid.inner(hi, v0).abs())
        .fold(0.0, f64::max);
    DriftRhs {
        b,
        f,
        h,
        solvability,
    }
}

fn check_solvable(ops: &DiscreteOperatorPair, rhs: &[Vec<f64>], v0: &[f64], tol: f64) -> Result<()> {
    let worst = rhs
        .iter()
        .map(|r| ops.grid().inner(r, v0).abs())
        .fold(0.0, f64::max);
    if worst > tol {
        return Err(Error::Unsolvable {
            residual: worst,
            tolerance: tol,
        });
    }
    Ok(())
}

/// Solves A kappa1^i = h^i with zero-mean gauge. Returns (kappa1, max residual).
pub fn solve_corrector1(
    ops: &DiscreteOperatorPair,
    h: &[Vec<f64>],
    v0: &[f64],
    tol: f64,
    solvability_tol: f64,
) -> Result<(Vec<Vec<f64>>, f64)> {
    check_solvable(ops, h, v0, solvability_tol)?;
    let opts = GmresOptions::default();
    let mut residual = 0.0_f64;
    let mut out = Vec::with_capacity(h.len());
    for hi in h {
        let s = solve_gauged(ops, hi, tol, &opts)?;
        residual = residual.max(s.residual);
        out.push(s.solution);
    }
    Ok((out, residual))
}

/// F^{ij} = b^i kappa^j + (1/2) K^(ij) 1 - K^(i) kappa^j and Theta^{ij} = quadrature(F^{ij} v0).
/// Both are returned row-major.
pub fn effective_matrix(
    ops: &DiscreteOperatorPair,
    weighted: &WeightedKernels,
    kappa1: &[Vec<f64>],
    b: &[f64],
    v0: &[f64],
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = weighted.dim;
    let grid = ops.grid();
    let ones = vec![1.0; ops.len()];
    let mut theta = vec![0.0; d * d];
    let mut big_f = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            let second = ops.apply_weighted(weighted.second(i, j), &ones);
            let cross = ops.apply_weighted(&weighted.first[i], &kappa1[j]);
            let fij: Vec<f64> = (0..ops.len())
                .map(|m| b[i] * kappa1[j][m] + 0.5 * second[m] - cross[m])
                .collect();
            theta[i * d + j] = grid.inner(&fij, v0);
            big_f.push(fij);
        }
    }
    (theta, big_f)
}

/// Flux matrix I^{ij}: the v0-weighted quadratic form of (z + kappa(xi) - kappa(q)),
/// expanded into lattice sums. Row-major, symmetric by construction.
pub fn flux_matrix(
    ops: &DiscreteOperatorPair,
    weighted: &WeightedKernels,
    kappa1: &[Vec<f64>],
    v0: &[f64],
) -> Vec<f64> {
    let d = weighted.dim;
    let n = ops.len();
    let grid = ops.grid();
    let ones = vec![1.0; n];
    let g = ops.g_diag();
    let f: Vec<Vec<f64>> = weighted
        .first
        .iter()
        .map(|k| ops.apply_weighted(k, &ones))
        .collect();
    let k_kappa: Vec<Vec<f64>> = kappa1.iter().map(|k| ops.apply_k(k)).collect();
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let second = ops.apply_weighted(weighted.second(i, j), &ones);
            let cross_ij = ops.apply_weighted(&weighted.first[i], &kappa1[j]);
            let cross_ji = ops.apply_weighted(&weighted.first[j], &kappa1[i]);
            let prod: Vec<f64> = (0..n).map(|m| kappa1[i][m] * kappa1[j][m]).collect();
            let k_prod = ops.apply_k(&prod);
            let integrand: Vec<f64> = (0..n)
                .map(|m| {
                    let (ki, kj) = (kappa1[i][m], kappa1[j][m]);
                    second[m] + kj * f[i][m] - cross_ij[m] + ki * f[j][m] - cross_ji[m]
                        + ki * kj * g[m]
                        - ki * k_kappa[j][m]
                        - kj * k_kappa[i][m]
                        + k_prod[m]
                })
                .collect();
            let v = grid.inner(&integrand, v0);
            out[i * d + j] = v;
            out[j * d + i] = v;
        }
    }
    out
}

/// Solves -A kappa2^{ij} = F^{ij} - Theta^{ij} with zero-mean gauge.
pub fn solve_corrector2(
    ops: &DiscreteOperatorPair,
    big_f: &[Vec<f64>],
    theta: &[f64],
    v0: &[f64],
    tol: f64,
    solvability_tol: f64,
) -> Result<(Vec<Vec<f64>>, f64)> {
    let rhs: Vec<Vec<f64>> = big_f
        .iter()
        .zip(theta)
        .map(|(fij, t)| fij.iter().map(|v| t - v).collect())
        .collect();
    check_solvable(ops, &rhs, v0, solvability_tol)?;
    let opts = GmresOptions::default();
    let mut residual = 0.0_f64;
    let mut out = Vec::with_capacity(rhs.len());
    for r in &rhs {
        let s = solve_gauged(ops, r, tol, &opts)?;
        residual = residual.max(s.residual);
        out.push(s.solution);
    }
    Ok((out, residual))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub ground_state: f64,
    pub solvability: f64,
    pub corrector1: f64,
    pub corrector2: f64,
}

/// Output of the full cell pipeline. Matrices are row-major d x d.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSolution {
    pub grid: TorusGrid,
    pub v0: Vec<f64>,
    pub b: Vec<f64>,
    pub kappa1: Vec<Vec<f64>>,
    pub kappa2: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
    pub flux: Vec<f64>,
    pub residuals: Residuals,
}

impl CellSolution {
    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    pub fn theta_sym(&self) -> Vec<f64> {
        let d = self.dim();
        let mut s = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                s[i * d + j] = 0.5 * (self.theta[i * d + j] + self.theta[j * d + i]);
            }
        }
        s
    }

    /// Smallest eigenvalue of the symmetric part of Theta.
    pub fn min_sym_eigenvalue(&self) -> f64 {
        let d = self.dim();
        nalgebra::DMatrix::from_row_slice(d, d, &self.theta_sym())
            .symmetric_eigenvalues()
            .min()
    }

    /// ||I - (Theta + Theta^T)||_max / ||I||_max
    pub fn flux_identity_defect(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0_f64;
        for i in 0..d {
            for j in 0..d {
                let s = self.theta[i * d + j] + self.theta[j * d + i];
                worst = worst.max((self.flux[i * d + j] - s).abs());
            }
        }
        worst / inf_norm(&self.flux)
    }
}

/// Runs ground state, drift, both correctors, Theta and I on a prepared problem.
pub fn solve_prepared(problem: &CellProblem, tol: &Tolerances) -> Result<CellSolution> {
    tol.validate()?;
    let ops = &problem.ops;
    let (v0, gs_res) = ground_state(ops, tol.ground_state, tol.max_ground_state_iter)?;
    let drift = drift_and_rhs(ops, &problem.weighted, &v0);
    let (kappa1, c1_res) = solve_corrector1(ops, &drift.h, &v0, tol.corrector, tol.solvability)?;
    let (theta, big_f) = effective_matrix(ops, &problem.weighted, &kappa1, &drift.b, &v0);
    let flux = flux_matrix(ops, &problem.weighted, &kappa1, &v0);
    let (kappa2, c2_res) =
        solve_corrector2(ops, &big_f, &theta, &v0, tol.corrector, tol.solvability)?;
    Ok(CellSolution {
        grid: problem.grid.clone(),
        v0,
        b: drift.b,
        kappa1,
        kappa2,
        theta,
        flux,
        residuals: Residuals {
            ground_state: gs_res,
            solvability: drift.solvability,
            corrector1: c1_res,
            corrector2: c2_res,
        },
    })
}

/// Full cell pipeline from kernel, coefficient and grid.
pub fn solve_cell(
    kernel: &dyn JumpDensity,
    mu: &CoefficientSpec,
    grid: &TorusGrid,
    assembly: &AssemblyOptions,
    tol: &Tolerances,
) -> Result<CellSolution> {
    let problem = CellProblem::new(kernel, mu, grid, assembly, tol.periodization)?;
    solve_prepared(&problem, tol)
}
