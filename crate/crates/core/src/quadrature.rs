//! Adaptive Gauss-Kronrod quadrature on boxes in R^d (nested over dimensions).

use crate::error::{Error, Result};

// Kronrod 15-point abscissae (positive half, descending) and weights.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss 7-point weights at XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_DEPTH: usize = 40;

fn gk15(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let pair = f(c - dx) + f(c + dx);
        kron += WGK[i] * pair;
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Adaptive 1D integral of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn integrate_1d(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut worst = 0.0_f64;
    let mut stack = vec![(a, b, tol, 0usize)];
    while let Some((lo, hi, local_tol, depth)) = stack.pop() {
        let (value, err) = gk15(f, lo, hi);
        if err <= local_tol || depth >= MAX_DEPTH {
            if err > local_tol {
                worst = worst.max(err);
            }
            total += value;
            continue;
        }
        let mid = 0.5 * (lo + hi);
        stack.push((mid, hi, 0.5 * local_tol, depth + 1));
        stack.push((lo, mid, 0.5 * local_tol, depth + 1));
    }
    if worst > tol {
        return Err(Error::Quadrature { achieved: worst });
    }
    Ok(total)
}

/// Nested adaptive integral of `f` over the box `lo..hi` (any dimension).
pub fn integrate_box(f: &dyn Fn(&[f64]) -> f64, lo: &[f64], hi: &[f64], tol: f64) -> Result<f64> {
    let mut point = lo.to_vec();
    nested(f, lo, hi, tol, 0, &mut point)
}

fn nested(
    f: &dyn Fn(&[f64]) -> f64,
    lo: &[f64],
    hi: &[f64],
    tol: f64,
    axis: usize,
    point: &mut [f64],
) -> Result<f64> {
    let d = lo.len();
    if axis + 1 == d {
        let mut g = |x: f64| {
            point[axis] = x;
            f(point)
        };
        return integrate_1d(&mut g, lo[axis], hi[axis], tol);
    }
    let inner_tol = tol / (hi[axis] - lo[axis]).max(1.0) * 0.1;
    let mut failure = None;
    let mut g = |x: f64| {
        let mut p = point.to_vec();
        p[axis] = x;
        match nested(f, lo, hi, inner_tol, axis + 1, &mut p) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        }
    };
    let value = integrate_1d(&mut g, lo[axis], hi[axis], tol)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(value),
    }
}
