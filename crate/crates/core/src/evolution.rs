//! Direct simulation of the rescaled evolution du/dt = L^eps u on the slow
//! torus, the exact limit u0, and moving-frame error diagnostics.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cell::CellSolution;
use crate::error::{Error, Result};
use crate::fft::{to_complex, FftNd};
use crate::kernel::{CoefficientSpec, JumpDensity};
use crate::torus::TorusGrid;

/// Number of equispaced snapshot times in [0, T].
pub const SNAPSHOTS: usize = 33;
/// Smallest admissible cell resolution.
pub const MIN_CELL_RESOLUTION: usize = 16;

/// Initial datum phi on the slow torus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialDatum {
    /// cos(2 pi k0 . x)
    Harmonic { k0: Vec<i64> },
    /// Periodized exp(-|x - c|^2 / (2 width^2)) centred at c = (1/2, ..).
    GaussianBump { width: f64 },
}

impl InitialDatum {
    pub fn sample(&self, grid: &TorusGrid) -> Result<Vec<f64>> {
        match self {
            InitialDatum::Harmonic { k0 } => {
                if k0.len() != grid.dim {
                    return Err(Error::Config(format!(
                        "harmonic k0 has {} components, expected {}",
                        k0.len(),
                        grid.dim
                    )));
                }
                Ok(grid.sample(|x| {
                    let phase: f64 = x.iter().zip(k0).map(|(xi, k)| xi * *k as f64).sum();
                    (2.0 * PI * phase).cos()
                }))
            }
            InitialDatum::GaussianBump { width } => {
                if !(*width > 0.0 && *width <= 0.25) {
                    return Err(Error::Config("bump width must lie in (0, 1/4]".into()));
                }
                let w2 = 2.0 * width * width;
                Ok(grid.sample(|x| {
                    x.iter()
                        .map(|xi| {
                            (-3..=3)
                                .map(|k| {
                                    let r = xi - 0.5 + k as f64;
                                    (-r * r / w2).exp()
                                })
                                .sum::<f64>()
                        })
                        .product()
                }))
            }
        }
    }
}

/// One simulation at a fixed epsilon = 1/M.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    pub epsilon: f64,
    pub horizon: f64,
    pub n_cell: usize,
    pub initial_datum: InitialDatum,
    pub dt_safety: f64,
}

impl EvolutionConfig {
    /// Validates the configuration and returns M = 1/epsilon.
    pub fn inverse_epsilon(&self) -> Result<usize> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Config("epsilon must lie in (0, 1]".into()));
        }
        let m = (1.0 / self.epsilon).round();
        if (m * self.epsilon - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "1/epsilon = {} is not an integer",
                1.0 / self.epsilon
            )));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if self.n_cell < MIN_CELL_RESOLUTION {
            return Err(Error::Config(format!(
                "n_cell must be at least {MIN_CELL_RESOLUTION}"
            )));
        }
        if !(self.dt_safety > 0.0 && self.dt_safety <= 1.0) {
            return Err(Error::Config("dt_safety must lie in (0, 1]".into()));
        }
        Ok(m as usize)
    }
}

/// L^eps on the fine slow grid with M n_cell points per axis, in difference form
/// L u(x_j) = sum_s c[p(j)][s] (u(x_j - eps z_s) - u(x_j)), z_s = s / n_cell.
#[derive(Clone, Debug)]
pub struct FineOperator {
    dim: usize,
    n_cell: usize,
    inverse_epsilon: usize,
    shifts: Vec<Vec<i64>>,
    coef: Vec<f64>,
    kernel_mass: f64,
}

impl FineOperator {
    pub fn new(
        kernel: &dyn JumpDensity,
        mu: &CoefficientSpec,
        n_cell: usize,
        inverse_epsilon: usize,
    ) -> Result<Self> {
        let dim = kernel.dim();
        if mu.dim() != dim {
            return Err(Error::Config("kernel and coefficient dimensions differ".into()));
        }
        let n_fine = inverse_epsilon * n_cell;
        let reach = (kernel.decay_radius() * n_cell as f64).floor() as i64;
        if 2 * reach as usize > n_fine {
            return Err(Error::Config(format!(
                "jump reach {:.3} exceeds half the slow torus at epsilon = 1/{inverse_epsilon}",
                kernel.decay_radius() / inverse_epsilon as f64
            )));
        }
        let cell = TorusGrid::new(dim, n_cell)?;
        let h = 1.0 / n_cell as f64;
        let w = h.powi(dim as i32);
        let side = (2 * reach + 1) as usize;
        let mut shifts = Vec::new();
        let mut values = Vec::new();
        let mut kernel_mass = 0.0;
        for flat in 0..side.pow(dim as u32) {
            let mut rest = flat;
            let mut s = vec![0i64; dim];
            for c in s.iter_mut().rev() {
                *c = (rest % side) as i64 - reach;
                rest /= side;
            }
            let z: Vec<f64> = s.iter().map(|v| *v as f64 * h).collect();
            let a = kernel.eval(&z);
            kernel_mass += w * a;
            if a != 0.0 && s.iter().any(|v| *v != 0) {
                shifts.push(s);
                values.push(a);
            }
        }
        let eps2 = (inverse_epsilon * inverse_epsilon) as f64;
        let ns = shifts.len();
        let mut coef = vec![0.0; cell.len() * ns];
        for p in 0..cell.len() {
            let xi = cell.coords(p);
            for (k, (s, a)) in shifts.iter().zip(&values).enumerate() {
                let y: Vec<f64> = xi.iter().zip(s).map(|(x, si)| x - *si as f64 * h).collect();
                coef[p * ns + k] = eps2 * w * a * mu.eval(&xi, &y);
            }
        }
        Ok(Self {
            dim,
            n_cell,
            inverse_epsilon,
            shifts,
            coef,
            kernel_mass,
        })
    }

    pub fn fine_grid(&self) -> TorusGrid {
        TorusGrid {
            dim: self.dim,
            n: self.n_fine(),
        }
    }

    pub fn n_fine(&self) -> usize {
        self.inverse_epsilon * self.n_cell
    }

    pub fn epsilon(&self) -> f64 {
        1.0 / self.inverse_epsilon as f64
    }

    /// Node quadrature of the kernel over the fast grid.
    pub fn kernel_mass(&self) -> f64 {
        self.kernel_mass
    }

    /// Flat cell-grid index of the fast variable x_j / eps.
    pub fn cell_index(&self, j: usize) -> usize {
        let nf = self.n_fine();
        let mut rest = j;
        let mut p = 0;
        let mut stride = 1;
        for _ in 0..self.dim {
            p += (rest % nf % self.n_cell) * stride;
            rest /= nf;
            stride *= self.n_cell;
        }
        p
    }

    /// Cell-grid field evaluated at x_j / eps on the fine grid.
    pub fn lift(&self, cell_field: &[f64]) -> Vec<f64> {
        (0..self.fine_grid().len())
            .map(|j| cell_field[self.cell_index(j)])
            .collect()
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let nf = self.n_fine() as i64;
        let ns = self.shifts.len();
        let dim = self.dim;
        (0..u.len())
            .into_par_iter()
            .map(|j| {
                let row = &self.coef[self.cell_index(j) * ns..(self.cell_index(j) + 1) * ns];
                let (j0, j1) = if dim == 1 {
                    (j as i64, 0)
                } else {
                    ((j / nf as usize) as i64, (j % nf as usize) as i64)
                };
                let uj = u[j];
                let mut acc = 0.0;
                for (c, s) in row.iter().zip(&self.shifts) {
                    let target = if dim == 1 {
                        (j0 - s[0]).rem_euclid(nf) as usize
                    } else {
                        ((j0 - s[0]).rem_euclid(nf) * nf + (j1 - s[1]).rem_euclid(nf)) as usize
                    };
                    acc += c * (u[target] - uj);
                }
                acc
            })
            .collect()
    }
}

/// Snapshots and conservation diagnostics of one time integration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionRun {
    pub times: Vec<f64>,
    pub snapshots: Vec<Vec<f64>>,
    pub weighted_mass: Vec<f64>,
    pub weighted_energy: Vec<f64>,
    /// Largest per-step energy increase, relative to the initial energy.
    pub max_energy_increase: f64,
    /// Largest excursion of u beyond [min phi, max phi].
    pub max_overshoot: f64,
    pub dt: f64,
    pub steps: usize,
}

/// Classical RK4 integration of du/dt = L^eps u with SNAPSHOTS equispaced outputs.
/// `weight` is v0(x / eps) on the fine grid.
pub fn evolve_u_eps(
    op: &FineOperator,
    phi: &[f64],
    weight: &[f64],
    horizon: f64,
    dt_safety: f64,
    alpha2: f64,
) -> Result<EvolutionRun> {
    let grid = op.fine_grid();
    let n = grid.len();
    assert_eq!(phi.len(), n);
    assert_eq!(weight.len(), n);
    let eps = op.epsilon();
    let dt_max = dt_safety * eps * eps / (2.0 * op.kernel_mass() * alpha2);
    let interval = horizon / (SNAPSHOTS - 1) as f64;
    let per = (interval / dt_max).ceil().max(1.0) as usize;
    let dt = interval / per as f64;
    let mass = |u: &[f64]| grid.inner(u, weight);
    let energy = |u: &[f64]| {
        grid.weight() * u.iter().zip(weight).map(|(x, w)| x * x * w).sum::<f64>()
    };
    let (lo, hi) = phi
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let e0 = energy(phi);
    let axpy = |u: &[f64], k: &[f64], s: f64| -> Vec<f64> {
        u.iter().zip(k).map(|(a, b)| a + s * b).collect()
    };

    let mut u = phi.to_vec();
    let mut run = EvolutionRun {
        times: vec![0.0],
        snapshots: vec![u.clone()],
        weighted_mass: vec![mass(&u)],
        weighted_energy: vec![e0],
        max_energy_increase: f64::NEG_INFINITY,
        max_overshoot: 0.0,
        dt,
        steps: per * (SNAPSHOTS - 1),
    };
    let mut e_prev = e0;
    for snap in 1..SNAPSHOTS {
        for step in 0..per {
            let k1 = op.apply(&u);
            let k2 = op.apply(&axpy(&u, &k1, 0.5 * dt));
            let k3 = op.apply(&axpy(&u, &k2, 0.5 * dt));
            let k4 = op.apply(&axpy(&u, &k3, dt));
            for i in 0..n {
                u[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            let t = ((snap - 1) * per + step + 1) as f64 * dt;
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::Instability { time: t });
            }
            let e = energy(&u);
            run.max_energy_increase = run.max_energy_increase.max((e - e_prev) / e0);
            e_prev = e;
            for v in &u {
                run.max_overshoot = run.max_overshoot.max(v - hi).max(lo - v);
            }
        }
        run.times.push(snap as f64 * interval);
        run.weighted_mass.push(mass(&u));
        run.weighted_energy.push(e_prev);
        run.snapshots.push(u.clone());
    }
    Ok(run)
}

/// Reference frame for the exact limit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Frame {
    Static,
    /// u0(x - b t / eps, t)
    Moving { epsilon: f64 },
}

fn sym_quadratic(theta: &[f64], k: &[i64]) -> f64 {
    let d = k.len();
    let mut q = 0.0;
    for i in 0..d {
        for j in 0..d {
            q += 0.5 * (theta[i * d + j] + theta[j * d + i]) * (k[i] * k[j]) as f64;
        }
    }
    q
}

fn shift_phase(k: &[i64], shift: &[f64]) -> Complex64 {
    let dot: f64 = k.iter().zip(shift).map(|(a, s)| *a as f64 * s).sum();
    Complex64::from_polar(1.0, 2.0 * PI * dot)
}

/// Fourier coefficients of u0(., t), optionally in the moving frame.
pub fn exact_u0_spectrum(
    fft: &FftNd,
    phi_hat: &[Complex64],
    theta: &[f64],
    b: &[f64],
    t: f64,
    frame: Frame,
) -> Vec<Complex64> {
    let shift: Vec<f64> = match frame {
        Frame::Static => vec![0.0; b.len()],
        Frame::Moving { epsilon } => b.iter().map(|bi| -bi * t / epsilon).collect(),
    };
    phi_hat
        .iter()
        .enumerate()
        .map(|(f, c)| {
            let k = fft.wavevector(f);
            let decay = (-4.0 * PI * PI * t * sym_quadratic(theta, &k)).exp();
            c * decay * shift_phase(&k, &shift)
        })
        .collect()
}

/// Spectral solution of du0/dt = Theta : grad grad u0 on the grid of `phi`.
pub fn exact_u0(
    grid: &TorusGrid,
    phi: &[f64],
    theta: &[f64],
    b: &[f64],
    t: f64,
    frame: Frame,
) -> Vec<f64> {
    let fft = FftNd::new(grid.n, grid.dim);
    let mut hat = to_complex(phi);
    fft.forward(&mut hat);
    let mut out = exact_u0_spectrum(&fft, &hat, theta, b, t, frame);
    fft.inverse(&mut out);
    out.into_iter().map(|c| c.re).collect()
}

fn spectral_l2(a: &[Complex64], b: &[Complex64]) -> f64 {
    let n = a.len() as f64;
    (a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>()).sqrt() / n
}

/// w = u0 + eps kappa1 . grad u0 + eps^2 kappa2 : grad grad u0, with u0 in the moving frame.
pub fn build_ansatz(
    op: &FineOperator,
    u0_moving_hat: &[Complex64],
    cell: &CellSolution,
) -> Vec<f64> {
    let grid = op.fine_grid();
    let d = grid.dim;
    let fft = FftNd::new(grid.n, d);
    let eps = op.epsilon();
    let derivative = |axes: &[usize]| -> Vec<f64> {
        let mut hat: Vec<Complex64> = u0_moving_hat
            .iter()
            .enumerate()
            .map(|(f, c)| {
                if axes.len() % 2 == 1 && fft.is_nyquist(f) {
                    return Complex64::new(0.0, 0.0);
                }
                let k = fft.wavevector(f);
                axes.iter()
                    .fold(*c, |acc, &a| acc * Complex64::new(0.0, 2.0 * PI * k[a] as f64))
            })
            .collect();
        fft.inverse(&mut hat);
        hat.into_iter().map(|c| c.re).collect()
    };
    let mut base = u0_moving_hat.to_vec();
    fft.inverse(&mut base);
    let mut w: Vec<f64> = base.into_iter().map(|c| c.re).collect();
    for i in 0..d {
        let k1 = op.lift(&cell.kappa1[i]);
        let g = derivative(&[i]);
        for j in 0..w.len() {
            w[j] += eps * k1[j] * g[j];
        }
        for l in 0..d {
            let k2 = op.lift(&cell.kappa2[i * d + l]);
            let gg = derivative(&[i, l]);
            for j in 0..w.len() {
                w[j] += eps * eps * k2[j] * gg[j];
            }
        }
    }
    w
}

/// Moving-frame error traces and invariants for one epsilon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionReport {
    pub epsilon: f64,
    pub inverse_epsilon: usize,
    pub times: Vec<f64>,
    /// ||u^eps(. + b t / eps, t) - u0(., t)||
    pub l2_error: Vec<f64>,
    /// ||u^eps(., t) - u0(. - b t / eps, t)||
    pub l2_error_backward: Vec<f64>,
    /// ||u^eps(., t) - w^eps(., t)||
    pub ansatz_error: Vec<f64>,
    pub weighted_mass: Vec<f64>,
    pub weighted_energy: Vec<f64>,
    pub sup_error: f64,
    pub final_error: f64,
    pub final_ansatz_error: f64,
    /// max_t |mass(t) - mass(0)| relative to the weighted L1 norm of phi.
    pub mass_drift: f64,
    pub max_energy_increase: f64,
    pub max_overshoot: f64,
    /// max_t |l2_error - l2_error_backward|
    pub frame_identity: f64,
    pub dt: f64,
    pub steps: usize,
}

impl EvolutionReport {
    /// CSV with columns t, l2_error, weighted_mass, weighted_energy.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,l2_error,weighted_mass,weighted_energy\n");
        for k in 0..self.times.len() {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e}\n",
                self.times[k], self.l2_error[k], self.weighted_mass[k], self.weighted_energy[k]
            ));
        }
        out
    }
}

/// Compares a finished run against the exact limit in both frames and against the ansatz.
pub fn moving_frame_error(
    op: &FineOperator,
    run: &EvolutionRun,
    phi: &[f64],
    weight: &[f64],
    cell: &CellSolution,
) -> EvolutionReport {
    let grid = op.fine_grid();
    let eps = op.epsilon();
    let fft = FftNd::new(grid.n, grid.dim);
    let mut phi_hat = to_complex(phi);
    fft.forward(&mut phi_hat);
    let mut forward = Vec::with_capacity(run.times.len());
    let mut backward = Vec::with_capacity(run.times.len());
    let mut ansatz = Vec::with_capacity(run.times.len());
    for (t, u) in run.times.iter().zip(&run.snapshots) {
        let mut u_hat = to_complex(u);
        fft.forward(&mut u_hat);
        let fixed = exact_u0_spectrum(&fft, &phi_hat, &cell.theta, &cell.b, *t, Frame::Static);
        let moving = exact_u0_spectrum(
            &fft,
            &phi_hat,
            &cell.theta,
            &cell.b,
            *t,
            Frame::Moving { epsilon: eps },
        );
        let shift: Vec<f64> = cell.b.iter().map(|bi| bi * t / eps).collect();
        let shifted: Vec<Complex64> = u_hat
            .iter()
            .enumerate()
            .map(|(f, c)| c * shift_phase(&fft.wavevector(f), &shift))
            .collect();
        forward.push(spectral_l2(&shifted, &fixed));
        backward.push(spectral_l2(&u_hat, &moving));
        let w = build_ansatz(op, &moving, cell);
        let diff: Vec<f64> = u.iter().zip(&w).map(|(a, b)| a - b).collect();
        ansatz.push(grid.inner(&diff, &diff).sqrt());
    }
    let l1: f64 = grid.weight() * phi.iter().zip(weight).map(|(p, w)| p.abs() * w).sum::<f64>();
    let m0 = run.weighted_mass[0];
    let mass_drift = run
        .weighted_mass
        .iter()
        .map(|m| (m - m0).abs() / l1)
        .fold(0.0, f64::max);
    let frame_identity = forward
        .iter()
        .zip(&backward)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    EvolutionReport {
        epsilon: eps,
        inverse_epsilon: op.inverse_epsilon,
        times: run.times.clone(),
        sup_error: forward.iter().cloned().fold(0.0, f64::max),
        final_error: *forward.last().expect("snapshots"),
        final_ansatz_error: *ansatz.last().expect("snapshots"),
        l2_error: forward,
        l2_error_backward: backward,
        ansatz_error: ansatz,
        weighted_mass: run.weighted_mass.clone(),
        weighted_energy: run.weighted_energy.clone(),
        mass_drift,
        max_energy_increase: run.max_energy_increase,
        max_overshoot: run.max_overshoot,
        frame_identity,
        dt: run.dt,
        steps: run.steps,
    }
}

/// Full study at one epsilon: fine operator, time integration and error report.
/// `cell` must be solved for the same kernel and coefficient on the n_cell grid.
pub fn simulate(
    kernel: &dyn JumpDensity,
    mu: &CoefficientSpec,
    cfg: &EvolutionConfig,
    cell: &CellSolution,
) -> Result<EvolutionReport> {
    let m = cfg.inverse_epsilon()?;
    if cell.grid.n != cfg.n_cell || cell.grid.dim != kernel.dim() {
        return Err(Error::Config(
            "cell solution must live on the n_cell grid of the evolution".into(),
        ));
    }
    let op = FineOperator::new(kernel, mu, cfg.n_cell, m)?;
    let phi = cfg.initial_datum.sample(&op.fine_grid())?;
    let weight = op.lift(&cell.v0);
    let run = evolve_u_eps(&op, &phi, &weight, cfg.horizon, cfg.dt_safety, mu.alpha2)?;
    Ok(moving_frame_error(&op, &run, &phi, &weight, cell))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSpec;

    #[test]
    fn generator_annihilates_constants() {
        let a = KernelSpec::shifted_gaussian(0.2, vec![0.3]).unwrap();
        let mu = CoefficientSpec::trig_product(0.5, 1).unwrap();
        let op = FineOperator::new(&a, &mu, 16, 8).unwrap();
        let lu = op.apply(&vec![2.5; op.fine_grid().len()]);
        assert!(lu.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn reach_beyond_half_torus_is_rejected() {
        let a = KernelSpec::gaussian(0.5, 1).unwrap();
        let mu = CoefficientSpec::constant(1.0, 1).unwrap();
        assert!(matches!(FineOperator::new(&a, &mu, 16, 2), Err(Error::Config(_))));
    }

    #[test]
    fn closed_form_decay_and_phase() {
        let grid = TorusGrid::new(1, 32).unwrap();
        let phi = grid.sample(|x| (2.0 * PI * x[0]).cos());
        let u = exact_u0(&grid, &phi, &[0.065], &[0.0], 1.0, Frame::Static);
        let amp = (-4.0 * PI * PI * 0.065_f64).exp();
        assert!((u[0] - amp).abs() < 1e-13);
        let t = 0.3;
        let moving = exact_u0(&grid, &phi, &[0.0], &[0.3], t, Frame::Moving { epsilon: 0.25 });
        for (j, v) in moving.iter().enumerate() {
            let x = j as f64 / 32.0;
            assert!((v - (2.0 * PI * (x - 1.2 * t)).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn epsilon_must_be_reciprocal_integer() {
        let cfg = EvolutionConfig {
            epsilon: 0.3,
            horizon: 0.1,
            n_cell: 16,
            initial_datum: InitialDatum::Harmonic { k0: vec![1] },
            dt_safety: 0.5,
        };
        assert!(cfg.inverse_epsilon().is_err());
        let ok = EvolutionConfig {
            epsilon: 0.125,
            ..cfg
        };
        assert_eq!(ok.inverse_epsilon().unwrap(), 8);
    }
}
