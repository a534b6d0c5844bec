//! Independent dense verification path.
//!
//! Matrix entries are assembled by summing the lattice kernel directly for
//! each node pair, the invariant density comes from an SVD null vector, and
//! correctors from bordered (Lagrange-multiplier) LU solves. Nothing here goes
//! through the periodization, operator or Krylov code of the main pipeline.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cell::CellSolution;
use crate::error::{Error, Result};
use crate::kernel::{CoefficientSpec, JumpDensity};
use crate::torus::TorusGrid;

/// Largest grid accepted by the dense oracle.
pub const ORACLE_MAX_N: usize = 256;
/// Default agreement threshold against the iterative pipeline.
pub const ORACLE_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleSolution {
    pub v0: Vec<f64>,
    pub b: Vec<f64>,
    pub kappa1: Vec<Vec<f64>>,
    pub kappa2: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
}

fn lattice_matrix(
    density: &dyn JumpDensity,
    mu: &CoefficientSpec,
    n: usize,
    weight: impl Fn(f64) -> f64,
) -> DMatrix<f64> {
    let h = 1.0 / n as f64;
    let reach = density.decay_radius().ceil() as i64 + 2;
    DMatrix::from_fn(n, n, |j, m| {
        let (xj, xm) = (j as f64 * h, m as f64 * h);
        let mut s = 0.0;
        for k in -reach..=reach {
            let z = xj - xm + k as f64;
            s += weight(z) * density.eval(&[z]);
        }
        h * s * mu.eval(&[xj], &[xm])
    })
}

fn bordered_solve(a: &DMatrix<f64>, rhs: &[f64], h: f64) -> Result<Vec<f64>> {
    let n = a.nrows();
    let mut big = DMatrix::zeros(n + 1, n + 1);
    big.view_mut((0, 0), (n, n)).copy_from(a);
    for i in 0..n {
        big[(i, n)] = 1.0;
        big[(n, i)] = h;
    }
    let mut r = DVector::zeros(n + 1);
    for i in 0..n {
        r[i] = rhs[i];
    }
    let sol = big
        .lu()
        .solve(&r)
        .ok_or_else(|| Error::Discretization("bordered oracle system is singular".into()))?;
    Ok(sol.iter().take(n).cloned().collect())
}

/// Dense recomputation of v0, b, kappa1, Theta and kappa2 (d = 1 only).
pub fn dense_cell_solution(
    density: &dyn JumpDensity,
    mu: &CoefficientSpec,
    grid: &TorusGrid,
) -> Result<OracleSolution> {
    if grid.dim != 1 || grid.n > ORACLE_MAX_N {
        return Err(Error::Config(format!(
            "dense oracle supports d = 1 and N <= {ORACLE_MAX_N}"
        )));
    }
    let n = grid.n;
    let h = 1.0 / n as f64;
    let k0 = lattice_matrix(density, mu, n, |_| 1.0);
    let k1 = lattice_matrix(density, mu, n, |z| z);
    let k2 = lattice_matrix(density, mu, n, |z| z * z);
    let g = DVector::from_iterator(n, k0.row_iter().map(|r| r.sum()));
    let a = &k0 - DMatrix::from_diagonal(&g);

    let svd = a.transpose().svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Discretization("oracle SVD failed".into()))?;
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("nonempty");
    let null: Vec<f64> = v_t.row(idx).iter().cloned().collect();
    let total: f64 = null.iter().sum::<f64>() * h;
    let v0: Vec<f64> = null.iter().map(|v| v / total).collect();

    let ones = DVector::from_element(n, 1.0);
    let vv = DVector::from_vec(v0.clone());
    let f = &k1 * &ones;
    let b = h * f.dot(&vv);
    let rhs1: Vec<f64> = f.iter().map(|v| v - b).collect();
    let kappa = bordered_solve(&a, &rhs1, h)?;
    let kv = DVector::from_vec(kappa.clone());
    let second = &k2 * &ones;
    let cross = &k1 * &kv;
    let big_f: Vec<f64> = (0..n)
        .map(|m| b * kappa[m] + 0.5 * second[m] - cross[m])
        .collect();
    let theta = h * big_f.iter().zip(&v0).map(|(x, y)| x * y).sum::<f64>();
    let rhs2: Vec<f64> = big_f.iter().map(|v| theta - v).collect();
    let kappa2 = bordered_solve(&a, &rhs2, h)?;
    Ok(OracleSolution {
        v0,
        b: vec![b],
        kappa1: vec![kappa],
        kappa2: vec![kappa2],
        theta: vec![theta],
    })
}

/// Largest absolute discrepancy per field between the pipeline and the oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub v0: f64,
    pub b: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub theta: f64,
    pub tolerance: f64,
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

fn nested_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| max_diff(x, y))
        .fold(0.0, f64::max)
}

impl OracleReport {
    pub fn compare(pipeline: &CellSolution, oracle: &OracleSolution, tolerance: f64) -> Self {
        Self {
            v0: max_diff(&pipeline.v0, &oracle.v0),
            b: max_diff(&pipeline.b, &oracle.b),
            kappa1: nested_diff(&pipeline.kappa1, &oracle.kappa1),
            kappa2: nested_diff(&pipeline.kappa2, &oracle.kappa2),
            theta: max_diff(&pipeline.theta, &oracle.theta),
            tolerance,
        }
    }

    pub fn fields(&self) -> [(&'static str, f64); 5] {
        [
            ("v0", self.v0),
            ("b", self.b),
            ("kappa1", self.kappa1),
            ("kappa2", self.kappa2),
            ("theta", self.theta),
        ]
    }

    pub fn max_discrepancy(&self) -> f64 {
        self.fields().iter().map(|f| f.1).fold(0.0, f64::max)
    }

    /// First field above tolerance, as an oracle-mismatch error.
    pub fn check(&self) -> Result<()> {
        match self.fields().iter().find(|f| f.1 > self.tolerance) {
            Some((field, discrepancy)) => Err(Error::OracleMismatch {
                field: field.to_string(),
                discrepancy: *discrepancy,
            }),
            None => Ok(()),
        }
    }
}
