//! Multi-dimensional FFT on the periodic spatial cube, built from 1-D plans.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub struct NdFft {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl NdFft {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    /// In-place transform of a row-major cube `buf` of side `n` and dimension
    /// `dim` (axis 0 slowest). Unnormalized, like the underlying plans; an
    /// inverse pass scales by n^dim.
    pub fn process(&self, buf: &mut [Complex<f64>], dim: usize, inverse: bool) {
        let n = self.n;
        debug_assert_eq!(buf.len(), n.pow(dim as u32));
        let plan = if inverse { &self.inverse } else { &self.forward };
        let mut line = vec![Complex::default(); n];
        for axis in 0..dim {
            let stride = n.pow((dim - 1 - axis) as u32);
            let lines = buf.len() / n;
            for l in 0..lines {
                // base offset of the l-th line along `axis`
                let block = l / stride;
                let within = l % stride;
                let base = block * stride * n + within;
                for (k, slot) in line.iter_mut().enumerate() {
                    *slot = buf[base + k * stride];
                }
                plan.process(&mut line);
                for (k, slot) in line.iter().enumerate() {
                    buf[base + k * stride] = *slot;
                }
            }
        }
    }
}

/// Signed integer frequency of DFT bin `k` for length `n`.
#[inline]
pub fn signed_freq(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}
