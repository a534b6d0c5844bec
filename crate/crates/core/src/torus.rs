//! Uniform grids on the unit torus, lattice periodization of R^d kernels,
//! and the discrete operators K, K* and G built from them.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{to_complex, FftNd};
use crate::kernel::{CoefficientSpec, JumpDensity};

/// Uniform grid on T^d with N points per axis; nodes j/N, weights h^d.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusGrid {
    pub dim: usize,
    pub n: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::Config(format!("grid dimension {dim} unsupported (use 1 or 2)")));
        }
        if n < 4 {
            return Err(Error::Config(format!("grid needs at least 4 points per axis, got {n}")));
        }
        Ok(Self { dim, n })
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn weight(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Per-axis integer indices of a flat node index (row-major).
    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim];
        let mut rest = flat;
        for axis in (0..self.dim).rev() {
            out[axis] = rest % self.n;
            rest /= self.n;
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().fold(0, |acc, &i| acc * self.n + (i % self.n))
    }

    pub fn coords(&self, flat: usize) -> Vec<f64> {
        let h = self.spacing();
        self.multi_index(flat).into_iter().map(|i| i as f64 * h).collect()
    }

    /// Flat row-major coordinate table (len * dim).
    pub fn coordinate_table(&self) -> Vec<f64> {
        (0..self.len()).flat_map(|j| self.coords(j)).collect()
    }

    /// Index of the difference node xi_j - xi_m (mod 1).
    #[inline]
    pub fn diff_index(&self, j: usize, m: usize) -> usize {
        let n = self.n;
        match self.dim {
            1 => (j + n - m) % n,
            2 => {
                let (j0, j1) = (j / n, j % n);
                let (m0, m1) = (m / n, m % n);
                ((j0 + n - m0) % n) * n + (j1 + n - m1) % n
            }
            _ => {
                let a = self.multi_index(j);
                let b = self.multi_index(m);
                let d: Vec<usize> = a.iter().zip(&b).map(|(x, y)| (x + n - y) % n).collect();
                self.flat_index(&d)
            }
        }
    }

    /// Rectangle rule h^d sum over nodes.
    pub fn quadrature(&self, field: &[f64]) -> f64 {
        debug_assert_eq!(field.len(), self.len());
        self.weight() * field.iter().sum::<f64>()
    }

    /// Rectangle rule of a pointwise product.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weight() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    /// Samples a function of the node coordinates.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.len()).map(|j| f(&self.coords(j))).collect()
    }
}

/// Monomial weight z^alpha with |alpha| <= 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Weight {
    Mass,
    First(usize),
    Second(usize, usize),
}

impl Weight {
    #[inline]
    pub fn factor(&self, z: &[f64]) -> f64 {
        match *self {
            Weight::Mass => 1.0,
            Weight::First(i) => z[i],
            Weight::Second(i, j) => z[i] * z[j],
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        let ok = match *self {
            Weight::Mass => true,
            Weight::First(i) => i < dim,
            Weight::Second(i, j) => i < dim && j < dim,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("weight {self:?} out of range for d = {dim}")))
        }
    }
}

/// Default hard cap on lattice shells for periodization.
pub const DEFAULT_SHELL_CAP: usize = 64;
/// Default max-norm threshold for the last lattice shell.
pub const DEFAULT_PERIODIZATION_TOL: f64 = 1e-15;

/// Weighted lattice sum sum_k (eta+k)^alpha a(eta+k) sampled on the difference grid.
#[derive(Clone, Debug)]
pub struct PeriodizedKernel {
    pub weight: Weight,
    pub values: Vec<f64>,
    pub shells_used: usize,
    pub tail_bound: f64,
    pub grid: TorusGrid,
}

fn shell(dim: usize, k: i64) -> Vec<Vec<i64>> {
    if k == 0 {
        return vec![vec![0; dim]];
    }
    let side = 2 * k + 1;
    let total = (side as usize).pow(dim as u32);
    let mut out = Vec::new();
    for flat in 0..total {
        let mut rest = flat as i64;
        let mut v = vec![0; dim];
        for c in v.iter_mut() {
            *c = rest % side - k;
            rest /= side;
        }
        if v.iter().any(|c| c.abs() == k) {
            out.push(v);
        }
    }
    out
}

/// Periodizes a density on the grid, adding lattice shells until one contributes
/// less than `tol` in max norm and lies wholly beyond the decay radius.
pub fn periodize_weighted(
    density: &dyn JumpDensity,
    weight: Weight,
    grid: &TorusGrid,
    tol: f64,
) -> Result<PeriodizedKernel> {
    periodize_with_cap(density, weight, grid, tol, DEFAULT_SHELL_CAP)
}

pub fn periodize_with_cap(
    density: &dyn JumpDensity,
    weight: Weight,
    grid: &TorusGrid,
    tol: f64,
    cap: usize,
) -> Result<PeriodizedKernel> {
    if density.dim() != grid.dim {
        return Err(Error::Config("kernel and grid dimensions differ".into()));
    }
    weight.check(grid.dim)?;
    if !(tol > 0.0) {
        return Err(Error::Config("periodization tolerance must be positive".into()));
    }
    let d = grid.dim;
    let coords = grid.coordinate_table();
    let mut values = vec![0.0; grid.len()];
    let min_shells = density.decay_radius().ceil() as usize + 1;
    let mut tail = f64::INFINITY;
    let mut z = vec![0.0; d];
    for k in 0..=cap {
        let lattice = shell(d, k as i64);
        let mut shell_max = 0.0_f64;
        for (j, v) in values.iter_mut().enumerate() {
            let eta = &coords[j * d..(j + 1) * d];
            let mut add = 0.0;
            for shift in &lattice {
                for a in 0..d {
                    z[a] = eta[a] + shift[a] as f64;
                }
                add += weight.factor(&z) * density.eval(&z);
            }
            *v += add;
            shell_max = shell_max.max(add.abs());
        }
        tail = shell_max;
        if k >= 1 && k >= min_shells && shell_max < tol {
            return Ok(PeriodizedKernel {
                weight,
                values,
                shells_used: k,
                tail_bound: tail,
                grid: grid.clone(),
            });
        }
    }
    Err(Error::Truncation {
        shells: cap,
        tail_bound: tail,
    })
}

/// How the operator couples nodes: full mu table or lambda(x) nu(y) factors.
#[derive(Clone, Debug)]
enum Coupling {
    Dense { mu: Vec<f64> },
    Separable { lambda: Vec<f64>, nu: Vec<f64>, fft: FftNd },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageMode {
    #[default]
    Auto,
    Dense,
    MatrixFree,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssemblyOptions {
    #[serde(default)]
    pub storage: StorageMode,
    /// Memory cap (bytes) for the dense kernel and coefficient tables together.
    #[serde(default = "default_dense_cap")]
    pub dense_cap_bytes: usize,
}

fn default_dense_cap() -> usize {
    512 << 20
}

/// Largest node count stored densely.
pub const DENSE_NODE_LIMIT: usize = 4096;

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self {
            storage: StorageMode::Auto,
            dense_cap_bytes: default_dense_cap(),
        }
    }
}

/// Discrete K, its adjoint under the grid quadrature, and G = K 1.
#[derive(Clone, Debug)]
pub struct DiscreteOperatorPair {
    grid: TorusGrid,
    coupling: Coupling,
    /// Dense h^d a_hat(xi_j - xi_m) mu(xi_j, xi_m), row-major (dense coupling only).
    matrix: Vec<f64>,
    /// Spectrum of the kernel for the convolution path.
    kernel_spectrum: Vec<Complex64>,
    g_diag: Vec<f64>,
}

/// Assembles K and G from the mass periodization and the coefficient.
pub fn assemble_operators(
    a_hat: &PeriodizedKernel,
    mu: &CoefficientSpec,
    grid: &TorusGrid,
    opts: &AssemblyOptions,
) -> Result<DiscreteOperatorPair> {
    if a_hat.grid != *grid {
        return Err(Error::Config("periodized kernel resolution does not match grid".into()));
    }
    if a_hat.weight != Weight::Mass {
        return Err(Error::Config("operators are assembled from the unweighted periodization".into()));
    }
    if mu.dim() != grid.dim {
        return Err(Error::Config("coefficient and grid dimensions differ".into()));
    }
    let n = grid.len();
    let dense_bytes = 2usize.saturating_mul(n).saturating_mul(n).saturating_mul(8);
    let dense_fits = n <= DENSE_NODE_LIMIT && dense_bytes <= opts.dense_cap_bytes;
    let use_dense = match opts.storage {
        StorageMode::Dense => {
            if dense_bytes > opts.dense_cap_bytes {
                log::warn!("dense storage exceeds the memory cap; using matrix-free operators");
                false
            } else {
                true
            }
        }
        StorageMode::Auto => dense_fits,
        StorageMode::MatrixFree => false,
    };
    let coords = grid.coordinate_table();
    let d = grid.dim;
    let node = |j: usize| &coords[j * d..(j + 1) * d];

    let coupling = if use_dense {
        let mut table = vec![0.0; n * n];
        table.par_chunks_mut(n).enumerate().for_each(|(j, row)| {
            let x = node(j);
            for (m, v) in row.iter_mut().enumerate() {
                *v = mu.eval(x, node(m));
            }
        });
        Coupling::Dense { mu: table }
    } else {
        match mu.separable_factors() {
            Some((lam, nu)) => Coupling::Separable {
                lambda: (0..n).map(|j| lam(node(j))).collect(),
                nu: (0..n).map(|j| nu(node(j))).collect(),
                fft: FftNd::new(grid.n, d),
            },
            None => {
                return Err(Error::Capability(format!(
                    "non-separable coefficient needs dense storage, which is unavailable for {n} nodes"
                )))
            }
        }
    };

    let mut ops = DiscreteOperatorPair {
        grid: grid.clone(),
        coupling,
        matrix: Vec::new(),
        kernel_spectrum: Vec::new(),
        g_diag: Vec::new(),
    };
    match &ops.coupling {
        Coupling::Dense { mu } => {
            let hd = grid.weight();
            let mut matrix = vec![0.0; n * n];
            matrix.par_chunks_mut(n).enumerate().for_each(|(j, row)| {
                for (m, v) in row.iter_mut().enumerate() {
                    *v = hd * a_hat.values[grid.diff_index(j, m)] * mu[j * n + m];
                }
            });
            ops.matrix = matrix;
        }
        Coupling::Separable { fft, .. } => {
            let mut spec = to_complex(&a_hat.values);
            fft.forward(&mut spec);
            ops.kernel_spectrum = spec;
        }
    }
    let ones = vec![1.0; n];
    ops.g_diag = ops.apply_k(&ones);
    if let Some(bad) = ops.g_diag.iter().find(|g| !(**g > 0.0)) {
        return Err(Error::Discretization(format!(
            "G is not strictly positive on the grid (found {bad:e})"
        )));
    }
    Ok(ops)
}

fn dense_apply(matrix: &[f64], n: usize, phi: &[f64]) -> Vec<f64> {
    matrix
        .par_chunks(n)
        .map(|row| {
            let mut s = 0.0;
            for (w, p) in row.iter().zip(phi) {
                s += w * p;
            }
            s
        })
        .collect()
}

fn dense_apply_transpose(matrix: &[f64], n: usize, psi: &[f64]) -> Vec<f64> {
    const BLOCK: usize = 256;
    let mut out = vec![0.0; n];
    out.par_chunks_mut(BLOCK).enumerate().for_each(|(b, chunk)| {
        let start = b * BLOCK;
        for (j, &p) in psi.iter().enumerate() {
            let row = &matrix[j * n + start..j * n + start + chunk.len()];
            for (o, w) in chunk.iter_mut().zip(row) {
                *o += w * p;
            }
        }
    });
    out
}

fn circular(fft: &FftNd, spectrum: &[Complex64], field: &[f64], conjugate: bool) -> Vec<f64> {
    let mut data = to_complex(field);
    fft.forward(&mut data);
    for (v, s) in data.iter_mut().zip(spectrum) {
        *v *= if conjugate { s.conj() } else { *s };
    }
    fft.inverse(&mut data);
    data.into_iter().map(|c| c.re).collect()
}

impl DiscreteOperatorPair {
    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.coupling, Coupling::Dense { .. })
    }

    /// G(xi_j) = (K 1)(xi_j).
    pub fn g_diag(&self) -> &[f64] {
        &self.g_diag
    }

    /// Dense row-major K matrix, when stored.
    pub fn dense_matrix(&self) -> Option<&[f64]> {
        if self.is_dense() {
            Some(&self.matrix)
        } else {
            None
        }
    }

    /// (K phi)(xi_j) = h^d sum_m a_hat(xi_j - xi_m) mu(xi_j, xi_m) phi(xi_m).
    pub fn apply_k(&self, phi: &[f64]) -> Vec<f64> {
        let n = self.len();
        assert_eq!(phi.len(), n);
        match &self.coupling {
            Coupling::Dense { .. } => dense_apply(&self.matrix, n, phi),
            Coupling::Separable { lambda, nu, fft } => {
                let hd = self.grid.weight();
                let weighted: Vec<f64> = phi.iter().zip(nu).map(|(p, v)| p * v).collect();
                let conv = circular(fft, &self.kernel_spectrum, &weighted, false);
                conv.iter().zip(lambda).map(|(c, l)| hd * l * c).collect()
            }
        }
    }

    /// (K* psi)(xi_m) = h^d sum_j a_hat(xi_j - xi_m) mu(xi_j, xi_m) psi(xi_j).
    pub fn apply_adjoint(&self, psi: &[f64]) -> Vec<f64> {
        let n = self.len();
        assert_eq!(psi.len(), n);
        match &self.coupling {
            Coupling::Dense { .. } => dense_apply_transpose(&self.matrix, n, psi),
            Coupling::Separable { lambda, nu, fft } => {
                let hd = self.grid.weight();
                let weighted: Vec<f64> = psi.iter().zip(lambda).map(|(p, l)| p * l).collect();
                let conv = circular(fft, &self.kernel_spectrum, &weighted, true);
                conv.iter().zip(nu).map(|(c, v)| hd * v * c).collect()
            }
        }
    }

    /// A phi = K phi - G phi.
    pub fn apply_a(&self, phi: &[f64]) -> Vec<f64> {
        let mut out = self.apply_k(phi);
        for ((o, g), p) in out.iter_mut().zip(&self.g_diag).zip(phi) {
            *o -= g * p;
        }
        out
    }

    /// Same coupling with another (weighted or signed) periodized kernel:
    /// h^d sum_m k_hat(xi_j - xi_m) mu(xi_j, xi_m) phi(xi_m).
    pub fn apply_weighted(&self, kernel: &PeriodizedKernel, phi: &[f64]) -> Vec<f64> {
        let n = self.len();
        assert_eq!(kernel.grid, self.grid);
        assert_eq!(phi.len(), n);
        let hd = self.grid.weight();
        match &self.coupling {
            Coupling::Dense { mu } => (0..n)
                .into_par_iter()
                .map(|j| {
                    let row = &mu[j * n..(j + 1) * n];
                    let mut s = 0.0;
                    for m in 0..n {
                        s += kernel.values[self.grid.diff_index(j, m)] * row[m] * phi[m];
                    }
                    hd * s
                })
                .collect(),
            Coupling::Separable { lambda, nu, fft } => {
                let mut spec = to_complex(&kernel.values);
                fft.forward(&mut spec);
                let weighted: Vec<f64> = phi.iter().zip(nu).map(|(p, v)| p * v).collect();
                let conv = circular(fft, &spec, &weighted, false);
                conv.iter().zip(lambda).map(|(c, l)| hd * l * c).collect()
            }
        }
    }
}
