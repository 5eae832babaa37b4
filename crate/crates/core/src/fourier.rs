//! Unitary 2-D FFT helpers on row-major complex buffers.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Cache of 1-D transforms keyed by length and direction.
#[derive(Clone, Default)]
pub struct FftCache {
    forward: HashMap<usize, Arc<dyn Fft<f64>>>,
    inverse: HashMap<usize, Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for FftCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut sizes: Vec<_> = self.forward.keys().collect();
        sizes.sort();
        f.debug_struct("FftCache").field("sizes", &sizes).finish()
    }
}

impl FftCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_sizes(sizes: impl IntoIterator<Item = usize>) -> Self {
        let mut planner = FftPlanner::new();
        let mut cache = Self::new();
        for n in sizes {
            cache.insert(&mut planner, n);
        }
        cache
    }

    fn insert(&mut self, planner: &mut FftPlanner<f64>, n: usize) {
        self.forward.entry(n).or_insert_with(|| planner.plan_fft_forward(n));
        self.inverse.entry(n).or_insert_with(|| planner.plan_fft_inverse(n));
    }

    fn get(&self, n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
        let table = if inverse { &self.inverse } else { &self.forward };
        match table.get(&n) {
            Some(f) => f.clone(),
            None => {
                let mut planner = FftPlanner::new();
                if inverse {
                    planner.plan_fft_inverse(n)
                } else {
                    planner.plan_fft_forward(n)
                }
            }
        }
    }

    /// In-place unitary 2-D DFT (`1/sqrt(rows*cols)` scaling both ways).
    pub fn fft2(&self, data: &mut [Complex64], rows: usize, cols: usize, inverse: bool) {
        assert_eq!(data.len(), rows * cols);
        if data.is_empty() {
            return;
        }
        let row_fft = self.get(cols, inverse);
        data.par_chunks_mut(cols * rows.div_ceil(8).max(1))
            .for_each(|chunk| row_fft.process(chunk));
        let mut t = transpose(data, rows, cols);
        let col_fft = self.get(rows, inverse);
        t.par_chunks_mut(rows * cols.div_ceil(8).max(1))
            .for_each(|chunk| col_fft.process(chunk));
        let back = transpose(&t, cols, rows);
        let s = 1.0 / ((rows * cols) as f64).sqrt();
        for (d, b) in data.iter_mut().zip(back) {
            *d = b * s;
        }
    }

    pub fn forward_real(&self, values: &[f64], rows: usize, cols: usize) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft2(&mut buf, rows, cols, false);
        buf
    }
}

fn transpose(data: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); rows * cols];
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    out[c * rows + r] = data[r * cols + c];
                }
            }
        }
    }
    out
}

/// Smallest integer `>= n` whose only prime factors are 2, 3 and 5.
pub fn next_smooth(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut k = m;
        for p in [2, 3, 5] {
            while k.is_multiple_of(p) {
                k /= p;
            }
        }
        if k == 1 {
            return m;
        }
        m += 1;
    }
}
