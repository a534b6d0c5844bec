//! Jump kernels a(z) on R^d, periodic rate coefficients mu(x, y), and
//! antisymmetric kernel perturbations c(z).

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::integrate_box;

/// Absolute tolerance used for quadrature moments.
pub const MOMENT_TOLERANCE: f64 = 1e-12;

/// Anything that can be sampled as a (possibly signed) kernel on R^d.
pub trait JumpDensity: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, z: &[f64]) -> f64;
    /// Radius around the origin outside which the kernel and its second moment are negligible.
    fn decay_radius(&self) -> f64;
}

/// Kernel family descriptor, as written in run configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelFamily {
    Gaussian {
        sigma: f64,
    },
    ShiftedGaussian {
        sigma: f64,
        shift: Vec<f64>,
    },
    AnisotropicGaussian {
        /// Row-major d x d covariance.
        covariance: Vec<f64>,
        #[serde(default)]
        shift: Vec<f64>,
    },
    CompactBump {
        radius: f64,
        #[serde(default)]
        shift: Vec<f64>,
    },
    CompositeBiased {
        base: Box<KernelFamily>,
        perturbation: PerturbationFamily,
        ell: Vec<f64>,
    },
}

/// Antisymmetric perturbation descriptor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerturbationFamily {
    /// c^i(z) = z^i a_sym(z) omega(|ell| |z|).
    Cutoff,
    /// c^i(z) = weight * (g(z - offset e_i) - g(z + offset e_i)) with g an isotropic Gaussian.
    OddGaussianPair { sigma: f64, offset: f64, weight: f64 },
}

#[derive(Clone, Debug)]
enum Shape {
    Gaussian {
        shift: Vec<f64>,
        precision: Vec<f64>,
        norm: f64,
    },
    Bump {
        radius: f64,
        shift: Vec<f64>,
        norm: f64,
    },
    Composite {
        base: Box<KernelSpec>,
        perturbation: PerturbationSpec,
    },
}

/// Analytic jump density a(z) with its moment metadata.
#[derive(Clone, Debug)]
pub struct KernelSpec {
    family: KernelFamily,
    dim: usize,
    decay_radius: f64,
    shape: Shape,
}

/// Mass, first moment and row-major second moment matrix of a kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mass: f64,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn shift_or_zero(shift: &[f64], dim: usize) -> Result<Vec<f64>> {
    match shift.len() {
        0 => Ok(vec![0.0; dim]),
        n if n == dim => {
            if shift.iter().all(|s| s.is_finite()) {
                Ok(shift.to_vec())
            } else {
                Err(Error::Config("kernel shift must be finite".into()))
            }
        }
        n => Err(Error::Config(format!(
            "kernel shift has {n} components, expected {dim}"
        ))),
    }
}

/// Inverse and determinant of a small symmetric positive definite matrix.
fn spd_inverse(cov: &[f64], dim: usize) -> Result<(Vec<f64>, f64)> {
    let m = nalgebra::DMatrix::from_row_slice(dim, dim, cov);
    if (&m - m.transpose()).abs().max() > 1e-14 * m.abs().max() {
        return Err(Error::Config("covariance must be symmetric".into()));
    }
    let chol = nalgebra::Cholesky::new(m)
        .ok_or_else(|| Error::Config("covariance must be positive definite".into()))?;
    let det = chol.determinant();
    let inv = chol.inverse();
    let mut out = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            out[i * dim + j] = inv[(i, j)];
        }
    }
    Ok((out, det))
}

/// Volume-normalizing integral of exp(-1/(1-|u|^2)) over the unit ball in R^d.
fn bump_unit_integral(dim: usize) -> Result<f64> {
    let surface = match dim {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => return Err(Error::Config(format!("compact bump unsupported in d = {dim}"))),
    };
    let radial = integrate_box(
        &|s: &[f64]| {
            let r2 = s[0] * s[0];
            if r2 >= 1.0 {
                0.0
            } else {
                s[0].powi(dim as i32 - 1) * (-1.0 / (1.0 - r2)).exp()
            }
        },
        &[0.0],
        &[1.0],
        1e-15,
    )?;
    Ok(surface * radial)
}

impl KernelSpec {
    pub fn new(family: KernelFamily, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(v)
            } else {
                Err(Error::Config(format!("{name} must be positive and finite")))
            }
        };
        let (shape, decay_radius) = match &family {
            KernelFamily::Gaussian { sigma } => {
                let s = positive("sigma", *sigma)?;
                gaussian_shape(&isotropic(s, dim), &vec![0.0; dim], dim)?
            }
            KernelFamily::ShiftedGaussian { sigma, shift } => {
                let s = positive("sigma", *sigma)?;
                let shift = shift_or_zero(shift, dim)?;
                gaussian_shape(&isotropic(s, dim), &shift, dim)?
            }
            KernelFamily::AnisotropicGaussian { covariance, shift } => {
                if covariance.len() != dim * dim {
                    return Err(Error::Config(format!(
                        "covariance needs {} entries, got {}",
                        dim * dim,
                        covariance.len()
                    )));
                }
                let shift = shift_or_zero(shift, dim)?;
                gaussian_shape(covariance, &shift, dim)?
            }
            KernelFamily::CompactBump { radius, shift } => {
                let r = positive("radius", *radius)?;
                let shift = shift_or_zero(shift, dim)?;
                let norm = 1.0 / (bump_unit_integral(dim)? * r.powi(dim as i32));
                let decay = r + norm2(&shift);
                (
                    Shape::Bump {
                        radius: r,
                        shift,
                        norm,
                    },
                    decay,
                )
            }
            KernelFamily::CompositeBiased {
                base,
                perturbation,
                ell,
            } => {
                let base = KernelSpec::new((**base).clone(), dim)?;
                let perturbation = PerturbationSpec::build(&base, perturbation, ell)?;
                return KernelSpec::composite(base, perturbation);
            }
        };
        Ok(Self {
            family,
            dim,
            decay_radius,
            shape,
        })
    }

    pub fn gaussian(sigma: f64, dim: usize) -> Result<Self> {
        Self::new(KernelFamily::Gaussian { sigma }, dim)
    }

    pub fn shifted_gaussian(sigma: f64, shift: Vec<f64>) -> Result<Self> {
        let dim = shift.len();
        Self::new(KernelFamily::ShiftedGaussian { sigma, shift }, dim)
    }

    pub fn compact_bump(radius: f64, shift: Vec<f64>) -> Result<Self> {
        let dim = shift.len();
        Self::new(KernelFamily::CompactBump { radius, shift }, dim)
    }

    /// Biased kernel a_sym(z) + ell . c(z); rejects perturbations that make it negative.
    pub fn composite(base: KernelSpec, perturbation: PerturbationSpec) -> Result<Self> {
        if perturbation.dim() != base.dim {
            return Err(Error::Config("perturbation dimension mismatch".into()));
        }
        let dim = base.dim;
        let decay_radius = perturbation
            .components
            .iter()
            .map(|c| c.decay_radius())
            .fold(base.decay_radius, f64::max);
        let family = KernelFamily::CompositeBiased {
            base: Box::new(base.family.clone()),
            perturbation: perturbation.family.clone(),
            ell: perturbation.ell.clone(),
        };
        let spec = Self {
            family,
            dim,
            decay_radius,
            shape: Shape::Composite {
                base: Box::new(base),
                perturbation,
            },
        };
        let min_value = spec.sampled_minimum(100_000, 0x5eed);
        if min_value < 0.0 {
            let step = match &spec.shape {
                Shape::Composite { perturbation, .. } => norm2(&perturbation.ell),
                _ => unreachable!(),
            };
            return Err(Error::StepTooLarge { step, min_value });
        }
        Ok(spec)
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    /// Smallest kernel value over random samples inside the decay box.
    pub fn sampled_minimum(&self, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = self.decay_radius;
        let mut z = vec![0.0; self.dim];
        let mut min = f64::INFINITY;
        for _ in 0..samples {
            for zi in z.iter_mut() {
                *zi = rng.gen_range(-r..r);
            }
            min = min.min(self.eval(&z));
        }
        min
    }

    /// Whether a(-z) = a(z), checked on random points.
    pub fn is_even(&self) -> bool {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let r = self.decay_radius;
        (0..256).all(|_| {
            let z: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-r..r)).collect();
            let mz: Vec<f64> = z.iter().map(|v| -v).collect();
            let (p, m) = (self.eval(&z), self.eval(&mz));
            (p - m).abs() <= 1e-12 * p.abs().max(m.abs()).max(1e-300)
        })
    }

    /// Mass, first and second moments: closed form for Gaussians, adaptive quadrature otherwise.
    pub fn moments(&self) -> Result<Moments> {
        let d = self.dim;
        match &self.shape {
            Shape::Gaussian { shift, .. } => {
                let cov = match &self.family {
                    KernelFamily::Gaussian { sigma } | KernelFamily::ShiftedGaussian { sigma, .. } => {
                        isotropic(*sigma, d)
                    }
                    KernelFamily::AnisotropicGaussian { covariance, .. } => covariance.clone(),
                    _ => unreachable!(),
                };
                let mut second = cov;
                for i in 0..d {
                    for j in 0..d {
                        second[i * d + j] += shift[i] * shift[j];
                    }
                }
                Ok(Moments {
                    mass: 1.0,
                    first: shift.clone(),
                    second,
                })
            }
            Shape::Bump { radius, shift, .. } => {
                let lo: Vec<f64> = shift.iter().map(|m| m - radius).collect();
                let hi: Vec<f64> = shift.iter().map(|m| m + radius).collect();
                self.quadrature_moments(&lo, &hi)
            }
            Shape::Composite { .. } => {
                let r = self.decay_radius;
                self.quadrature_moments(&vec![-r; d], &vec![r; d])
            }
        }
    }

    fn quadrature_moments(&self, lo: &[f64], hi: &[f64]) -> Result<Moments> {
        let d = self.dim;
        let tol = MOMENT_TOLERANCE;
        let mass = integrate_box(&|z: &[f64]| self.eval(z), lo, hi, tol)?;
        let mut first = vec![0.0; d];
        for (i, m) in first.iter_mut().enumerate() {
            *m = integrate_box(&|z: &[f64]| z[i] * self.eval(z), lo, hi, tol)?;
        }
        let mut second = vec![0.0; d * d];
        for i in 0..d {
            for j in i..d {
                let v = integrate_box(&|z: &[f64]| z[i] * z[j] * self.eval(z), lo, hi, tol)?;
                second[i * d + j] = v;
                second[j * d + i] = v;
            }
        }
        Ok(Moments {
            mass,
            first,
            second,
        })
    }
}

fn isotropic(sigma: f64, dim: usize) -> Vec<f64> {
    let mut cov = vec![0.0; dim * dim];
    for i in 0..dim {
        cov[i * dim + i] = sigma * sigma;
    }
    cov
}

fn gaussian_shape(cov: &[f64], shift: &[f64], dim: usize) -> Result<(Shape, f64)> {
    let (precision, det) = spd_inverse(cov, dim)?;
    let norm = 1.0 / ((2.0 * PI).powi(dim as i32) * det).sqrt();
    let max_var = nalgebra::DMatrix::from_row_slice(dim, dim, cov)
        .symmetric_eigenvalues()
        .max();
    let decay = 8.0 * max_var.sqrt() + norm2(shift);
    Ok((
        Shape::Gaussian {
            shift: shift.to_vec(),
            precision,
            norm,
        },
        decay,
    ))
}

impl JumpDensity for KernelSpec {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, z: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.dim);
        match &self.shape {
            Shape::Gaussian {
                shift,
                precision,
                norm,
            } => {
                let d = self.dim;
                let mut q = 0.0;
                for i in 0..d {
                    let di = z[i] - shift[i];
                    for j in 0..d {
                        q += di * precision[i * d + j] * (z[j] - shift[j]);
                    }
                }
                norm * (-0.5 * q).exp()
            }
            Shape::Bump {
                radius,
                shift,
                norm,
            } => {
                let r2: f64 = z
                    .iter()
                    .zip(shift)
                    .map(|(a, m)| (a - m) * (a - m))
                    .sum::<f64>()
                    / (radius * radius);
                if r2 >= 1.0 {
                    0.0
                } else {
                    norm * (-1.0 / (1.0 - r2)).exp()
                }
            }
            Shape::Composite { base, perturbation } => base.eval(z) + perturbation.eval(z),
        }
    }

    fn decay_radius(&self) -> f64 {
        self.decay_radius
    }
}

/// Smooth monotone cutoff: 1 on [0, 1/4], 0 on [1/2, inf), C-infinity in between.
pub fn omega(s: f64) -> f64 {
    if s <= 0.25 {
        1.0
    } else if s >= 0.5 {
        0.0
    } else {
        let t = 2.0 - 4.0 * s;
        let p = (-1.0 / t).exp();
        let q = (-1.0 / (1.0 - t)).exp();
        p / (p + q)
    }
}

/// One component c^i of an antisymmetric perturbation.
#[derive(Clone, Debug)]
pub enum AntisymmetricKernel {
    Cutoff {
        base: KernelSpec,
        axis: usize,
        ell_norm: f64,
    },
    OddGaussianPair {
        dim: usize,
        axis: usize,
        sigma: f64,
        offset: f64,
        weight: f64,
    },
}

impl JumpDensity for AntisymmetricKernel {
    fn dim(&self) -> usize {
        match self {
            AntisymmetricKernel::Cutoff { base, .. } => base.dim,
            AntisymmetricKernel::OddGaussianPair { dim, .. } => *dim,
        }
    }

    fn eval(&self, z: &[f64]) -> f64 {
        match self {
            AntisymmetricKernel::Cutoff {
                base,
                axis,
                ell_norm,
            } => {
                let w = if *ell_norm == 0.0 {
                    1.0
                } else {
                    omega(ell_norm * norm2(z))
                };
                if w == 0.0 {
                    0.0
                } else {
                    z[*axis] * base.eval(z) * w
                }
            }
            AntisymmetricKernel::OddGaussianPair {
                dim,
                axis,
                sigma,
                offset,
                weight,
            } => {
                let norm = (2.0 * PI * sigma * sigma).powf(-(*dim as f64) / 2.0);
                let (mut plus, mut minus) = (0.0, 0.0);
                for (i, &zi) in z.iter().enumerate() {
                    let o = if i == *axis { *offset } else { 0.0 };
                    plus += (zi - o) * (zi - o);
                    minus += (zi + o) * (zi + o);
                }
                let s2 = 2.0 * sigma * sigma;
                weight * norm * ((-plus / s2).exp() - (-minus / s2).exp())
            }
        }
    }

    fn decay_radius(&self) -> f64 {
        match self {
            AntisymmetricKernel::Cutoff { base, .. } => base.decay_radius,
            AntisymmetricKernel::OddGaussianPair { sigma, offset, .. } => 8.0 * sigma + offset.abs(),
        }
    }
}

/// Antisymmetric vector kernel c(z) together with the perturbation direction ell.
#[derive(Clone, Debug)]
pub struct PerturbationSpec {
    pub components: Vec<AntisymmetricKernel>,
    pub ell: Vec<f64>,
    pub is_cutoff_family: bool,
    family: PerturbationFamily,
}

impl PerturbationSpec {
    fn build(base: &KernelSpec, family: &PerturbationFamily, ell: &[f64]) -> Result<Self> {
        match family {
            PerturbationFamily::Cutoff => make_cutoff_perturbation(base, ell),
            PerturbationFamily::OddGaussianPair {
                sigma,
                offset,
                weight,
            } => Self::odd_gaussian_pair(base.dim, *sigma, *offset, *weight, ell),
        }
    }

    pub fn odd_gaussian_pair(
        dim: usize,
        sigma: f64,
        offset: f64,
        weight: f64,
        ell: &[f64],
    ) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Config("perturbation sigma must be positive".into()));
        }
        if ell.len() != dim {
            return Err(Error::Config("ell dimension mismatch".into()));
        }
        Ok(Self {
            components: (0..dim)
                .map(|axis| AntisymmetricKernel::OddGaussianPair {
                    dim,
                    axis,
                    sigma,
                    offset,
                    weight,
                })
                .collect(),
            ell: ell.to_vec(),
            is_cutoff_family: false,
            family: PerturbationFamily::OddGaussianPair {
                sigma,
                offset,
                weight,
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    /// ell . c(z)
    pub fn eval(&self, z: &[f64]) -> f64 {
        self.components
            .iter()
            .zip(&self.ell)
            .filter(|(_, l)| **l != 0.0)
            .map(|(c, l)| l * c.eval(z))
            .sum()
    }

    /// Same components with a different direction vector. Cutoff components
    /// are rebuilt because their cutoff radius depends on |ell|.
    pub fn with_ell(&self, ell: &[f64]) -> Result<Self> {
        match (&self.family, self.components.first()) {
            (PerturbationFamily::Cutoff, Some(AntisymmetricKernel::Cutoff { base, .. })) => {
                make_cutoff_perturbation(base, ell)
            }
            _ => {
                if ell.len() != self.dim() {
                    return Err(Error::Config("ell dimension mismatch".into()));
                }
                let mut out = self.clone();
                out.ell = ell.to_vec();
                Ok(out)
            }
        }
    }
}

/// Cutoff family c_ell(z) = z a_sym(z) omega(|ell| |z|).
pub fn make_cutoff_perturbation(a_sym: &KernelSpec, ell: &[f64]) -> Result<PerturbationSpec> {
    if ell.len() != a_sym.dim {
        return Err(Error::Config(format!(
            "ell has {} components, expected {}",
            ell.len(),
            a_sym.dim
        )));
    }
    if !a_sym.is_even() {
        return Err(Error::Input(
            "cutoff perturbation requires a symmetric base kernel".into(),
        ));
    }
    let ell_norm = norm2(ell);
    Ok(PerturbationSpec {
        components: (0..a_sym.dim)
            .map(|axis| AntisymmetricKernel::Cutoff {
                base: a_sym.clone(),
                axis,
                ell_norm,
            })
            .collect(),
        ell: ell.to_vec(),
        is_cutoff_family: true,
        family: PerturbationFamily::Cutoff,
    })
}

/// Coefficient family descriptor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientFamily {
    Constant {
        value: f64,
    },
    /// scale * (1 + p mean_i sin 2 pi x_i) * (1 + q mean_i cos 2 pi y_i)
    Separable {
        p: f64,
        q: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// scale * (1 + amplitude prod_i cos(2 pi x_i) cos(2 pi (y_i + phase)))
    TrigProduct {
        amplitude: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// Values on an n^d x n^d node table (x index major), multilinear periodic interpolation.
    Tabulated { n: usize, values: Vec<f64> },
}

fn one() -> f64 {
    1.0
}

/// One factor of a separable coefficient.
pub type Factor<'a> = Box<dyn Fn(&[f64]) -> f64 + Sync + 'a>;

/// Periodic rate modulation mu(x, y) with two-sided bounds.
#[derive(Clone, Debug)]
pub struct CoefficientSpec {
    family: CoefficientFamily,
    dim: usize,
    pub alpha1: f64,
    pub alpha2: f64,
}

#[inline]
fn frac(x: f64) -> f64 {
    x - x.floor()
}

impl CoefficientSpec {
    /// Builds a coefficient with its analytic bounds as the declared bounds.
    pub fn new(family: CoefficientFamily, dim: usize) -> Result<Self> {
        let (alpha1, alpha2) = analytic_bounds(&family, dim)?;
        if !(alpha1 > 0.0) {
            return Err(Error::Config(format!(
                "coefficient lower bound {alpha1} must be positive"
            )));
        }
        Ok(Self {
            family,
            dim,
            alpha1,
            alpha2,
        })
    }

    pub fn constant(value: f64, dim: usize) -> Result<Self> {
        Self::new(CoefficientFamily::Constant { value }, dim)
    }

    pub fn trig_product(amplitude: f64, dim: usize) -> Result<Self> {
        Self::new(
            CoefficientFamily::TrigProduct {
                amplitude,
                phase: 0.0,
                scale: 1.0,
            },
            dim,
        )
    }

    /// Replaces the bounds with user-declared ones, validated against a sample sweep.
    pub fn with_declared_bounds(mut self, alpha1: f64, alpha2: f64) -> Result<Self> {
        if !(alpha1 > 0.0 && alpha1 <= alpha2) {
            return Err(Error::Specification(format!(
                "declared bounds [{alpha1}, {alpha2}] must satisfy 0 < alpha1 <= alpha2"
            )));
        }
        self.alpha1 = alpha1;
        self.alpha2 = alpha2;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20_000 {
            let x: Vec<f64> = (0..self.dim).map(|_| rng.gen::<f64>()).collect();
            let y: Vec<f64> = (0..self.dim).map(|_| rng.gen::<f64>()).collect();
            self.eval_checked(&x, &y)?;
        }
        Ok(self)
    }

    pub fn family(&self) -> &CoefficientFamily {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// mu(x, y) with arguments reduced mod 1.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match &self.family {
            CoefficientFamily::Constant { value } => *value,
            CoefficientFamily::Separable { p, q, scale } => {
                let d = self.dim as f64;
                let lam = 1.0 + p * x.iter().map(|v| (2.0 * PI * frac(*v)).sin()).sum::<f64>() / d;
                let nu = 1.0 + q * y.iter().map(|v| (2.0 * PI * frac(*v)).cos()).sum::<f64>() / d;
                scale * lam * nu
            }
            CoefficientFamily::TrigProduct {
                amplitude,
                phase,
                scale,
            } => {
                let mut prod = 1.0;
                for (xi, yi) in x.iter().zip(y) {
                    prod *= (2.0 * PI * frac(*xi)).cos() * (2.0 * PI * frac(yi + phase)).cos();
                }
                scale * (1.0 + amplitude * prod)
            }
            CoefficientFamily::Tabulated { n, values } => tabulated(*n, values, x, y),
        }
    }

    /// mu(x, y), failing when the value leaves the declared bounds.
    pub fn eval_checked(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let v = self.eval(x, y);
        let slack = 1e-12 * self.alpha2.abs();
        if v < self.alpha1 - slack || v > self.alpha2 + slack {
            return Err(Error::Specification(format!(
                "mu({x:?}, {y:?}) = {v} outside declared bounds [{}, {}]",
                self.alpha1, self.alpha2
            )));
        }
        Ok(v)
    }

    /// (lambda, nu) with mu(x, y) = lambda(x) nu(y), when the family has that form.
    pub fn separable_factors(&self) -> Option<(Factor<'_>, Factor<'_>)> {
        let d = self.dim as f64;
        match &self.family {
            CoefficientFamily::Constant { value } => {
                let v = *value;
                Some((Box::new(move |_| v), Box::new(|_| 1.0)))
            }
            CoefficientFamily::Separable { p, q, scale } => {
                let (p, q, s) = (*p, *q, *scale);
                Some((
                    Box::new(move |x: &[f64]| {
                        s * (1.0 + p * x.iter().map(|v| (2.0 * PI * frac(*v)).sin()).sum::<f64>() / d)
                    }),
                    Box::new(move |y: &[f64]| {
                        1.0 + q * y.iter().map(|v| (2.0 * PI * frac(*v)).cos()).sum::<f64>() / d
                    }),
                ))
            }
            _ => None,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.family, CoefficientFamily::Constant { .. })
    }

    /// Whether mu(x, y) = mu(y, x).
    pub fn is_symmetric(&self) -> bool {
        match &self.family {
            CoefficientFamily::Constant { .. } => true,
            CoefficientFamily::Separable { p, q, .. } => *p == 0.0 && *q == 0.0,
            CoefficientFamily::TrigProduct { amplitude, phase, .. } => {
                *amplitude == 0.0 || frac(*phase) == 0.0
            }
            CoefficientFamily::Tabulated { n, values } => {
                let m = n.pow(self.dim as u32);
                (0..m).all(|i| (0..m).all(|j| values[i * m + j] == values[j * m + i]))
            }
        }
    }

    /// The same coefficient multiplied by `s > 0`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        if !(s > 0.0) {
            return Err(Error::Config("scale must be positive".into()));
        }
        let family = match &self.family {
            CoefficientFamily::Constant { value } => CoefficientFamily::Constant { value: value * s },
            CoefficientFamily::Separable { p, q, scale } => CoefficientFamily::Separable {
                p: *p,
                q: *q,
                scale: scale * s,
            },
            CoefficientFamily::TrigProduct {
                amplitude,
                phase,
                scale,
            } => CoefficientFamily::TrigProduct {
                amplitude: *amplitude,
                phase: *phase,
                scale: scale * s,
            },
            CoefficientFamily::Tabulated { n, values } => CoefficientFamily::Tabulated {
                n: *n,
                values: values.iter().map(|v| v * s).collect(),
            },
        };
        Ok(Self {
            family,
            dim: self.dim,
            alpha1: self.alpha1 * s,
            alpha2: self.alpha2 * s,
        })
    }
}

fn analytic_bounds(family: &CoefficientFamily, dim: usize) -> Result<(f64, f64)> {
    let finite = |v: f64, name: &str| {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Config(format!("{name} must be finite")))
        }
    };
    match family {
        CoefficientFamily::Constant { value } => {
            let v = finite(*value, "value")?;
            Ok((v, v))
        }
        CoefficientFamily::Separable { p, q, scale } => {
            let (p, q, s) = (finite(*p, "p")?.abs(), finite(*q, "q")?.abs(), finite(*scale, "scale")?);
            if p >= 1.0 || q >= 1.0 || s <= 0.0 {
                return Err(Error::Config("separable coefficient needs |p|, |q| < 1 and scale > 0".into()));
            }
            Ok((s * (1.0 - p) * (1.0 - q), s * (1.0 + p) * (1.0 + q)))
        }
        CoefficientFamily::TrigProduct {
            amplitude,
            phase,
            scale,
        } => {
            let a = finite(*amplitude, "amplitude")?.abs();
            finite(*phase, "phase")?;
            let s = finite(*scale, "scale")?;
            if a >= 1.0 || s <= 0.0 {
                return Err(Error::Config("trig_product needs |amplitude| < 1 and scale > 0".into()));
            }
            Ok((s * (1.0 - a), s * (1.0 + a)))
        }
        CoefficientFamily::Tabulated { n, values } => {
            let m = n.checked_pow(dim as u32).unwrap_or(usize::MAX);
            if *n < 2 || values.len() != m.saturating_mul(m) {
                return Err(Error::Config(format!(
                    "tabulated coefficient needs n >= 2 and n^(2d) = {} values, got {}",
                    m.saturating_mul(m),
                    values.len()
                )));
            }
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            finite(lo, "table")?;
            finite(hi, "table")?;
            Ok((lo, hi))
        }
    }
}

fn tabulated(n: usize, values: &[f64], x: &[f64], y: &[f64]) -> f64 {
    let d = x.len();
    let m = n.pow(d as u32);
    // 2d interpolation axes: x components then y components.
    let mut base = Vec::with_capacity(2 * d);
    let mut weight = Vec::with_capacity(2 * d);
    for v in x.iter().chain(y) {
        let s = frac(*v) * n as f64;
        let i = (s.floor() as usize).min(n - 1);
        base.push(i);
        weight.push(s - i as f64);
    }
    let mut total = 0.0;
    for corner in 0..(1usize << (2 * d)) {
        let mut w = 1.0;
        let (mut xi, mut yi) = (0usize, 0usize);
        for axis in 0..2 * d {
            let up = (corner >> axis) & 1 == 1;
            w *= if up { weight[axis] } else { 1.0 - weight[axis] };
            let idx = (base[axis] + up as usize) % n;
            if axis < d {
                xi = xi * n + idx;
            } else {
                yi = yi * n + idx;
            }
        }
        if w != 0.0 {
            total += w * values[xi * m + yi];
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_peak_values() {
        let g = KernelSpec::gaussian(0.2, 1).unwrap();
        assert!((g.eval(&[0.0]) - 1.994_711_402_007_163_5).abs() < 1e-12);
        let s = KernelSpec::shifted_gaussian(0.2, vec![0.3]).unwrap();
        assert!((s.eval(&[0.3]) - 1.994_711_402_007_163_5).abs() < 1e-12);
    }

    #[test]
    fn bump_support() {
        let b = KernelSpec::compact_bump(0.5, vec![0.0]).unwrap();
        assert_eq!(b.eval(&[0.6]), 0.0);
        assert!(b.eval(&[0.0]) > 0.0);
    }

    #[test]
    fn closed_form_moments() {
        let g = KernelSpec::gaussian(0.2, 1).unwrap().moments().unwrap();
        assert_eq!(g.mass, 1.0);
        assert_eq!(g.first, vec![0.0]);
        assert!((g.second[0] - 0.04).abs() < 1e-15);
        let s = KernelSpec::shifted_gaussian(0.2, vec![0.3]).unwrap().moments().unwrap();
        assert!((s.first[0] - 0.3).abs() < 1e-15);
        assert!((s.second[0] - 0.13).abs() < 1e-15);
    }

    #[test]
    fn mu_examples() {
        let mu = CoefficientSpec::trig_product(0.5, 1).unwrap();
        assert!((mu.eval(&[0.0], &[0.0]) - 1.5).abs() < 1e-15);
        for y in [0.0, 0.1, 0.37, 0.9] {
            assert!((mu.eval(&[0.25], &[y]) - 1.0).abs() < 1e-15);
        }
        let c = CoefficientSpec::constant(1.0, 2).unwrap();
        assert_eq!(c.eval(&[0.3, 7.1], &[-2.0, 0.5]), 1.0);
    }

    #[test]
    fn declared_bounds_inconsistent() {
        let mu = CoefficientSpec::trig_product(0.5, 1).unwrap();
        assert!(matches!(
            mu.with_declared_bounds(0.6, 1.5),
            Err(Error::Specification(_))
        ));
    }

    #[test]
    fn omega_profile() {
        assert_eq!(omega(0.0), 1.0);
        assert_eq!(omega(0.2), 1.0);
        assert_eq!(omega(0.6), 0.0);
        let mut prev = 1.0;
        for i in 0..=100 {
            let v = omega(0.25 + 0.25 * i as f64 / 100.0);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn cutoff_values() {
        let a = KernelSpec::gaussian(0.2, 1).unwrap();
        let p = make_cutoff_perturbation(&a, &[0.0]).unwrap();
        let z = 0.13;
        assert_eq!(p.components[0].eval(&[z]), z * a.eval(&[z]));
        // |ell||z| = 0.2 inside the flat region, 0.6 beyond the support of omega.
        let p = make_cutoff_perturbation(&a, &[1.0]).unwrap();
        assert_eq!(p.components[0].eval(&[0.2]), 0.2 * a.eval(&[0.2]));
        assert_eq!(p.components[0].eval(&[0.6]), 0.0);
    }

    #[test]
    fn cutoff_rejects_biased_base() {
        let a = KernelSpec::shifted_gaussian(0.2, vec![0.3]).unwrap();
        assert!(matches!(
            make_cutoff_perturbation(&a, &[0.1]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn oversized_perturbation_rejected() {
        let a = KernelSpec::gaussian(0.2, 1).unwrap();
        let c = PerturbationSpec::odd_gaussian_pair(1, 0.1, 0.2, 1.0, &[5.0]).unwrap();
        assert!(matches!(
            KernelSpec::composite(a, c),
            Err(Error::StepTooLarge { .. })
        ));
    }

    #[test]
    fn tabulated_interpolates_nodes() {
        let n = 4;
        let values: Vec<f64> = (0..16).map(|k| 1.0 + k as f64 * 0.1).collect();
        let mu = CoefficientSpec::new(CoefficientFamily::Tabulated { n, values: values.clone() }, 1).unwrap();
        assert!((mu.eval(&[0.25], &[0.5]) - values[6]).abs() < 1e-14);
        assert!((mu.eval(&[1.25], &[-0.5]) - values[6]).abs() < 1e-14);
        assert!((mu.alpha1 - 1.0).abs() < 1e-15);
    }
}
