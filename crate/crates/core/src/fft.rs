//! Multi-dimensional FFTs on cubic periodic grids, row-major layout.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct FftNd {
    n: usize,
    dim: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FftNd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftNd").field("n", &self.n).field("dim", &self.dim).finish()
    }
}

impl FftNd {
    pub fn new(n: usize, dim: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            dim,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn run(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        let total = self.len();
        assert_eq!(data.len(), total);
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for axis in 0..self.dim {
            let stride = n.pow((self.dim - 1 - axis) as u32);
            let block = stride * n;
            for outer in (0..total).step_by(block) {
                for inner in 0..stride {
                    let start = outer + inner;
                    for (k, v) in line.iter_mut().enumerate() {
                        *v = data[start + k * stride];
                    }
                    plan.process(&mut line);
                    for (k, v) in line.iter().enumerate() {
                        data[start + k * stride] = *v;
                    }
                }
            }
        }
    }

    /// Unnormalized forward transform.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.forward);
    }

    /// Inverse transform including the 1/len normalization.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inverse);
        let scale = 1.0 / self.len() as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    /// Signed integer frequency of each axis index.
    pub fn frequency(&self, index: usize) -> i64 {
        let n = self.n as i64;
        let k = index as i64;
        if k <= n / 2 {
            k
        } else {
            k - n
        }
    }

    /// Signed frequency multi-index of a flat position.
    pub fn wavevector(&self, flat: usize) -> Vec<i64> {
        let mut out = vec![0; self.dim];
        let mut rest = flat;
        for axis in (0..self.dim).rev() {
            out[axis] = self.frequency(rest % self.n);
            rest /= self.n;
        }
        out
    }

    /// Whether any component of the flat position sits on the Nyquist index.
    pub fn is_nyquist(&self, flat: usize) -> bool {
        if !self.n.is_multiple_of(2) {
            return false;
        }
        let mut rest = flat;
        for _ in 0..self.dim {
            if rest % self.n == self.n / 2 {
                return true;
            }
            rest /= self.n;
        }
        false
    }
}

pub fn to_complex(field: &[f64]) -> Vec<Complex64> {
    field.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}
