//! Independent numerical oracles used by the test and acceptance suites.
//!
//! Everything here is deliberately written as plain loops with no reference to
//! the tensor tape or the model code paths it checks.

use crate::tensor::Real;

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_difference<F: FnMut(&[Real]) -> Real>(
    mut f: F,
    x: &[Real],
    step: Real,
) -> Vec<Real> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let hi = f(&probe);
        probe[i] = orig - step;
        let lo = f(&probe);
        probe[i] = orig;
        grad[i] = (hi - lo) / (2.0 * step);
    }
    grad
}

/// Central finite difference of a single coordinate.
pub fn finite_difference_at<F: FnMut(&[Real]) -> Real>(
    mut f: F,
    x: &[Real],
    i: usize,
    step: Real,
) -> Real {
    let mut probe = x.to_vec();
    probe[i] = x[i] + step;
    let hi = f(&probe);
    probe[i] = x[i] - step;
    let lo = f(&probe);
    (hi - lo) / (2.0 * step)
}

/// |a - b| / (|a| + eps), the relative error convention used by the gradient
/// checks.
pub fn rel_err(analytic: Real, numeric: Real) -> Real {
    (analytic - numeric).abs() / (analytic.abs() + 1e-8)
}

pub fn max_rel_err(analytic: &[Real], numeric: &[Real]) -> Real {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, Real::max)
}

/// Naive triple-loop matrix product oracle.
pub fn naive_matmul(a: &[Real], b: &[Real], m: usize, k: usize, n: usize) -> Vec<Real> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = s;
        }
    }
    c
}

/// Quadruple-loop correlation-volume oracle: out[y,x,y2,x2] = <cur(y,x), past(y2,x2)>.
/// Token grids are row-major [h*w, c].
pub fn naive_correlation(
    cur: &[Real],
    past: &[Real],
    h: usize,
    w: usize,
    c: usize,
) -> Vec<Real> {
    let mut out = vec![0.0; h * w * h * w];
    for y in 0..h {
        for x in 0..w {
            for y2 in 0..h {
                for x2 in 0..w {
                    let mut s = 0.0;
                    for ch in 0..c {
                        s += cur[(y * w + x) * c + ch] * past[(y2 * w + x2) * c + ch];
                    }
                    out[((y * w + x) * h + y2) * w + x2] = s;
                }
            }
        }
    }
    out
}

/// Edge-replicate average pooling oracle over the last two axes of a
/// [lead, h, w] buffer.
pub fn naive_pool2d(
    data: &[Real],
    lead: usize,
    h: usize,
    w: usize,
    factor: usize,
) -> Vec<Real> {
    let oh = h.div_ceil(factor);
    let ow = w.div_ceil(factor);
    let mut out = vec![0.0; lead * oh * ow];
    for l in 0..lead {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        let y = (oy * factor + dy).min(h - 1);
                        let x = (ox * factor + dx).min(w - 1);
                        s += data[(l * h + y) * w + x];
                    }
                }
                out[(l * oh + oy) * ow + ox] = s / (factor * factor) as Real;
            }
        }
    }
    out
}

/// Deterministic uniform samples in [-1, 1] for oracle tests, independent of
/// the crate's rand plumbing (splitmix64 under the hood).
pub struct Splitmix(u64);

impl Splitmix {
    pub fn new(seed: u64) -> Self {
        Splitmix(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in [-1, 1].
    pub fn unit(&mut self) -> Real {
        (self.next_u64() >> 11) as Real / (1u64 << 53) as Real * 2.0 - 1.0
    }

    pub fn fill_unit(&mut self, n: usize) -> Vec<Real> {
        (0..n).map(|_| self.unit()).collect()
    }
}
