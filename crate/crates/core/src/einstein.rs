//! Linear response of the drift to a small antisymmetric kernel perturbation
//! a = a_sym + ell . c, by linearization and by finite differences of the full
//! cell pipeline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{drift_and_rhs, ground_state, solve_prepared, CellProblem, Tolerances};
use crate::error::{Error, Result};
use crate::kernel::{
    make_cutoff_perturbation, CoefficientSpec, JumpDensity, KernelSpec, PerturbationFamily,
    PerturbationSpec,
};
use crate::krylov::{solve_gauged, GmresOptions};
use crate::torus::{AssemblyOptions, TorusGrid};

fn default_steps() -> Vec<f64> {
    vec![1e-2, 5e-3, 2.5e-3]
}

fn default_perturbation() -> PerturbationFamily {
    PerturbationFamily::Cutoff
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EinsteinConfig {
    /// Strictly decreasing finite-difference steps.
    #[serde(default = "default_steps")]
    pub fd_steps: Vec<f64>,
    #[serde(default = "default_perturbation")]
    pub perturbation: PerturbationFamily,
}

impl Default for EinsteinConfig {
    fn default() -> Self {
        Self {
            fd_steps: default_steps(),
            perturbation: default_perturbation(),
        }
    }
}

impl EinsteinConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fd_steps.is_empty() {
            return Err(Error::Config("fd_steps must not be empty".into()));
        }
        if self.fd_steps.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::Config("fd_steps must be positive".into()));
        }
        if self.fd_steps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("fd_steps must be strictly decreasing".into()));
        }
        Ok(())
    }

    pub fn min_step(&self) -> f64 {
        *self.fd_steps.last().expect("validated")
    }

    pub fn max_step(&self) -> f64 {
        self.fd_steps[0]
    }
}

/// Perturbation components for a direction ell.
pub fn perturbation_for(
    a_sym: &KernelSpec,
    family: &PerturbationFamily,
    ell: &[f64],
) -> Result<PerturbationSpec> {
    match family {
        PerturbationFamily::Cutoff => make_cutoff_perturbation(a_sym, ell),
        PerturbationFamily::OddGaussianPair {
            sigma,
            offset,
            weight,
        } => PerturbationSpec::odd_gaussian_pair(a_sym.dim(), *sigma, *offset, *weight, ell),
    }
}

/// sum_s h^d w(z_s) k(z_s) mu(xi_j, xi_j - z_s) over unwrapped offsets z_s = s h,
/// i.e. the row integral of a weighted kernel, assembled without periodization.
pub fn row_moment(
    density: &dyn JumpDensity,
    weight: &dyn Fn(&[f64]) -> f64,
    mu: &CoefficientSpec,
    grid: &TorusGrid,
) -> Vec<f64> {
    let d = grid.dim;
    let h = grid.spacing();
    let reach = (density.decay_radius() / h).ceil() as i64 + 1;
    let side = (2 * reach + 1) as usize;
    let offsets: Vec<Vec<f64>> = (0..side.pow(d as u32))
        .map(|flat| {
            let mut rest = flat;
            let mut z = vec![0.0; d];
            for c in z.iter_mut().rev() {
                *c = ((rest % side) as i64 - reach) as f64 * h;
                rest /= side;
            }
            z
        })
        .collect();
    let values: Vec<f64> = offsets
        .iter()
        .map(|z| weight(z) * density.eval(z))
        .collect();
    (0..grid.len())
        .into_par_iter()
        .map(|j| {
            let xi = grid.coords(j);
            let mut s = 0.0;
            for (z, v) in offsets.iter().zip(&values) {
                if *v != 0.0 {
                    let y: Vec<f64> = xi.iter().zip(z).map(|(a, b)| a - b).collect();
                    s += v * mu.eval(&xi, &y);
                }
            }
            grid.weight() * s
        })
        .collect()
}

fn unit(d: usize, axis: usize, scale: f64) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[axis] = scale;
    v
}

/// Solves A_sym phi^j = 2 (K_c^j 1) with zero-mean gauge. Returns (phi, solvability residual).
pub fn solve_phi0(
    sym: &CellProblem,
    perturbation: &PerturbationSpec,
    mu: &CoefficientSpec,
    tol: &Tolerances,
) -> Result<(Vec<Vec<f64>>, f64)> {
    if !mu.is_symmetric() {
        return Err(Error::Input("linearization requires a symmetric coefficient".into()));
    }
    let grid = &sym.grid;
    let mut phi = Vec::with_capacity(perturbation.dim());
    let mut solvability = 0.0_f64;
    for c in &perturbation.components {
        let rhs: Vec<f64> = row_moment(c, &|_| 1.0, mu, grid)
            .into_iter()
            .map(|v| 2.0 * v)
            .collect();
        let res = grid.quadrature(&rhs).abs();
        solvability = solvability.max(res);
        if res > tol.solvability {
            return Err(Error::SymmetryViolation { residual: res });
        }
        phi.push(solve_gauged(&sym.ops, &rhs, tol.corrector, &GmresOptions::default())?.solution);
    }
    Ok((phi, solvability))
}

/// B_lin^{ij} = int int z^i c^j mu + int int z^i a_sym mu phi^j, row-major.
pub fn drift_linearization(
    a_sym: &KernelSpec,
    perturbation: &PerturbationSpec,
    mu: &CoefficientSpec,
    grid: &TorusGrid,
    phi: &[Vec<f64>],
) -> Vec<f64> {
    let d = grid.dim;
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        let moment = |z: &[f64]| z[i];
        let f_sym = row_moment(a_sym, &moment, mu, grid);
        for (j, c) in perturbation.components.iter().enumerate() {
            let direct = grid.quadrature(&row_moment(c, &moment, mu, grid));
            out[i * d + j] = direct + grid.inner(&f_sym, &phi[j]);
        }
    }
    out
}

/// Drift and ground state of the full pipeline at one perturbation vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbedDrift {
    pub ell: Vec<f64>,
    pub b: Vec<f64>,
    pub v0: Vec<f64>,
}

pub fn perturbed_drift(
    a_sym: &KernelSpec,
    family: &PerturbationFamily,
    ell: &[f64],
    mu: &CoefficientSpec,
    grid: &TorusGrid,
    assembly: &AssemblyOptions,
    tol: &Tolerances,
) -> Result<PerturbedDrift> {
    let kernel = KernelSpec::composite(a_sym.clone(), perturbation_for(a_sym, family, ell)?)?;
    let problem = CellProblem::new(&kernel, mu, grid, assembly, tol.periodization)?;
    let (v0, _) = ground_state(&problem.ops, tol.ground_state, tol.max_ground_state_iter)?;
    let drift = drift_and_rhs(&problem.ops, &problem.weighted, &v0);
    Ok(PerturbedDrift {
        ell: ell.to_vec(),
        b: drift.b,
        v0,
    })
}

/// Central differences at one step, for every axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdStep {
    pub h: f64,
    /// Row-major (i, j) = d b^i / d ell^j.
    pub jacobian: Vec<f64>,
    /// b(+h e_j), one vector per axis j.
    pub b_plus: Vec<Vec<f64>>,
    pub b_minus: Vec<Vec<f64>>,
    /// max |b(h e_j) + b(-h e_j)|
    pub even_part: f64,
    /// max_j ||v0(h e_j) - 1 - h phi^j||_inf, filled when phi is known.
    pub v0_expansion_defect: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdJacobian {
    pub steps: Vec<FdStep>,
    /// One Richardson level on the two smallest steps.
    pub richardson: Vec<f64>,
    /// |B(h_k) - B(h_k+1)| / |B(h_k+1) - B(h_k+2)|, max-norm.
    pub decay_ratios: Vec<f64>,
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Finite-difference drift Jacobian from the full pipeline at ell = +-h e_j.
#[allow(clippy::too_many_arguments)]
pub fn drift_finite_difference(
    a_sym: &KernelSpec,
    family: &PerturbationFamily,
    mu: &CoefficientSpec,
    grid: &TorusGrid,
    steps: &[f64],
    assembly: &AssemblyOptions,
    tol: &Tolerances,
    phi: Option<&[Vec<f64>]>,
) -> Result<FdJacobian> {
    let d = grid.dim;
    let jobs: Vec<(usize, usize, f64)> = (0..steps.len())
        .flat_map(|k| (0..d).flat_map(move |j| [(k, j, 1.0), (k, j, -1.0)]))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(k, j, sign)| {
            perturbed_drift(a_sym, family, &unit(d, j, sign * steps[k]), mu, grid, assembly, tol)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out_steps = Vec::with_capacity(steps.len());
    for (k, &h) in steps.iter().enumerate() {
        let mut jacobian = vec![0.0; d * d];
        let mut b_plus = Vec::with_capacity(d);
        let mut b_minus = Vec::with_capacity(d);
        let mut even_part = 0.0_f64;
        let mut defect = 0.0_f64;
        for j in 0..d {
            let plus = &runs[(k * d + j) * 2];
            let minus = &runs[(k * d + j) * 2 + 1];
            for i in 0..d {
                jacobian[i * d + j] = (plus.b[i] - minus.b[i]) / (2.0 * h);
                even_part = even_part.max((plus.b[i] + minus.b[i]).abs());
            }
            if let Some(phi) = phi {
                let dev = plus
                    .v0
                    .iter()
                    .zip(&phi[j])
                    .fold(0.0_f64, |m, (v, p)| m.max((v - 1.0 - h * p).abs()));
                defect = defect.max(dev);
            }
            b_plus.push(plus.b.clone());
            b_minus.push(minus.b.clone());
        }
        out_steps.push(FdStep {
            h,
            jacobian,
            b_plus,
            b_minus,
            even_part,
            v0_expansion_defect: phi.map(|_| defect),
        });
    }
    let richardson = match out_steps.len() {
        1 => out_steps[0].jacobian.clone(),
        n => {
            let (coarse, fine) = (&out_steps[n - 2], &out_steps[n - 1]);
            let r2 = (coarse.h / fine.h).powi(2);
            fine.jacobian
                .iter()
                .zip(&coarse.jacobian)
                .map(|(f, c)| (r2 * f - c) / (r2 - 1.0))
                .collect()
        }
    };
    let decay_ratios = out_steps
        .windows(3)
        .map(|w| {
            max_abs_diff(&w[0].jacobian, &w[1].jacobian) / max_abs_diff(&w[1].jacobian, &w[2].jacobian)
        })
        .collect();
    Ok(FdJacobian {
        steps: out_steps,
        richardson,
        decay_ratios,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deviations {
    /// max |B_lin - 2 Theta_sym|
    pub lin_vs_2theta: f64,
    /// max |B_fd - 2 Theta_sym| at the smallest step
    pub fd_vs_2theta: f64,
    /// max |B_lin - B_fd| at the smallest step
    pub lin_vs_fd: f64,
    pub richardson_vs_2theta: f64,
    pub richardson_vs_lin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EinsteinReport {
    pub cutoff_family: bool,
    pub phi0: Vec<Vec<f64>>,
    pub b_lin: Vec<f64>,
    /// Central difference at the smallest step.
    pub b_fd: Vec<f64>,
    pub b_fd_richardson: Vec<f64>,
    pub theta_sym: Vec<f64>,
    pub flux_sym: Vec<f64>,
    pub deviations: Deviations,
    pub fd_steps: Vec<f64>,
    pub fd: FdJacobian,
    /// max_j |quadrature(K_c^j 1)|
    pub antisymmetric_residual: f64,
    /// max_j |quadrature(phi^j)|
    pub phi0_gauge: f64,
    /// max_j ||phi^j - 2 kappa_sym^j||_inf
    pub phi0_minus_2kappa: f64,
    /// Observed orders of the v0 expansion defect between consecutive steps;
    /// None when the defect vanishes to roundoff.
    pub v0_expansion_orders: Vec<Option<f64>>,
    /// ||I_sym - 2 Theta_sym||_max / ||I_sym||_max
    pub flux_identity_defect: f64,
    /// |ell| at which the linearization kernel c is evaluated.
    pub reference_ell: f64,
}

impl EinsteinReport {
    /// CSV with one row per (step, i, j).
    pub fn jacobian_csv(&self) -> String {
        let d = self.b_lin.len().isqrt();
        let mut out = String::from("h,i,j,b_plus,b_minus,central\n");
        for s in &self.fd.steps {
            for i in 0..d {
                for j in 0..d {
                    out.push_str(&format!(
                        "{:.16e},{i},{j},{:.16e},{:.16e},{:.16e}\n",
                        s.h,
                        s.b_plus[j][i],
                        s.b_minus[j][i],
                        s.jacobian[i * d + j]
                    ));
                }
            }
        }
        out
    }
}

/// Einstein-relation study for an even base kernel and a symmetric coefficient.
pub fn einstein_check(
    a_sym: &KernelSpec,
    mu: &CoefficientSpec,
    grid: &TorusGrid,
    cfg: &EinsteinConfig,
    assembly: &AssemblyOptions,
    tol: &Tolerances,
) -> Result<EinsteinReport> {
    cfg.validate()?;
    if !a_sym.is_even() {
        return Err(Error::Input("base kernel must be even".into()));
    }
    if !mu.is_symmetric() {
        return Err(Error::Input("coefficient must be symmetric".into()));
    }
    let d = grid.dim;
    let sym = CellProblem::new(a_sym, mu, grid, assembly, tol.periodization)?;
    let cell = solve_prepared(&sym, tol)?;
    let theta_sym = cell.theta_sym();
    let reference_ell = cfg.max_step();
    let c = perturbation_for(a_sym, &cfg.perturbation, &unit(d, 0, reference_ell))?;
    let (phi, solvability) = solve_phi0(&sym, &c, mu, tol)?;
    let b_lin = drift_linearization(a_sym, &c, mu, grid, &phi);
    let fd = drift_finite_difference(
        a_sym,
        &cfg.perturbation,
        mu,
        grid,
        &cfg.fd_steps,
        assembly,
        tol,
        Some(&phi),
    )?;
    let b_fd = fd.steps.last().expect("validated").jacobian.clone();
    let two_theta: Vec<f64> = theta_sym.iter().map(|t| 2.0 * t).collect();
    let deviations = Deviations {
        lin_vs_2theta: max_abs_diff(&b_lin, &two_theta),
        fd_vs_2theta: max_abs_diff(&b_fd, &two_theta),
        lin_vs_fd: max_abs_diff(&b_lin, &b_fd),
        richardson_vs_2theta: max_abs_diff(&fd.richardson, &two_theta),
        richardson_vs_lin: max_abs_diff(&fd.richardson, &b_lin),
    };
    let phi0_gauge = phi
        .iter()
        .map(|p| grid.quadrature(p).abs())
        .fold(0.0, f64::max);
    let phi0_minus_2kappa = phi
        .iter()
        .zip(&cell.kappa1)
        .map(|(p, k)| p.iter().zip(k).fold(0.0_f64, |m, (a, b)| m.max((a - 2.0 * b).abs())))
        .fold(0.0, f64::max);
    let v0_expansion_orders = fd
        .steps
        .windows(2)
        .map(|w| {
            let (e0, e1) = (
                w[0].v0_expansion_defect.unwrap_or(0.0),
                w[1].v0_expansion_defect.unwrap_or(0.0),
            );
            let order = (e0 / e1).ln() / (w[0].h / w[1].h).ln();
            order.is_finite().then_some(order)
        })
        .collect();
    let flux_scale = cell.flux.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    Ok(EinsteinReport {
        cutoff_family: c.is_cutoff_family,
        phi0_gauge,
        phi0_minus_2kappa,
        antisymmetric_residual: solvability / 2.0,
        flux_identity_defect: max_abs_diff(&cell.flux, &two_theta) / flux_scale,
        flux_sym: cell.flux,
        phi0: phi,
        b_lin,
        b_fd,
        b_fd_richardson: fd.richardson.clone(),
        theta_sym,
        deviations,
        fd_steps: cfg.fd_steps.clone(),
        fd,
        v0_expansion_orders,
        reference_ell,
    })
}
