use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Reusable forward/inverse transform of a fixed length.
pub(crate) struct Spectral {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl Spectral {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Spectral {
            n,
            forward,
            inverse,
            buf: vec![Complex::default(); n],
            scratch: vec![Complex::default(); scratch_len],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    /// Zero-pads `frame` to the transform length and writes `|X_k|^2` for
    /// `k = 0..=n/2` into `out`.
    pub fn power_spectrum(&mut self, frame: &[f64], out: &mut [f64]) {
        self.load(frame);
        self.forward
            .process_with_scratch(&mut self.buf, &mut self.scratch);
        for (o, c) in out.iter_mut().zip(&self.buf[..self.n / 2 + 1]) {
            *o = c.norm_sqr();
        }
    }

    /// Circular autocorrelation of the zero-padded frame, unnormalized.
    pub fn autocorrelation(&mut self, frame: &[f64], out: &mut [f64]) {
        self.load(frame);
        self.forward
            .process_with_scratch(&mut self.buf, &mut self.scratch);
        for c in self.buf.iter_mut() {
            *c = Complex::new(c.norm_sqr(), 0.0);
        }
        self.inverse
            .process_with_scratch(&mut self.buf, &mut self.scratch);
        let scale = 1.0 / self.n as f64;
        for (o, c) in out.iter_mut().zip(&self.buf) {
            *o = c.re * scale;
        }
    }

    /// Real part of the inverse transform of a real, even spectrum given on
    /// `k = 0..=n/2`.
    pub fn inverse_real_even(&mut self, half: &[f64], out: &mut [f64]) {
        let n = self.n;
        for k in 0..n {
            let src = if k <= n / 2 { k } else { n - k };
            self.buf[k] = Complex::new(half[src], 0.0);
        }
        self.inverse
            .process_with_scratch(&mut self.buf, &mut self.scratch);
        let scale = 1.0 / n as f64;
        for (o, c) in out.iter_mut().zip(&self.buf) {
            *o = c.re * scale;
        }
    }

    fn load(&mut self, frame: &[f64]) {
        debug_assert!(frame.len() <= self.n);
        for (b, &x) in self.buf.iter_mut().zip(frame) {
            *b = Complex::new(x, 0.0);
        }
        for b in self.buf[frame.len()..].iter_mut() {
            *b = Complex::default();
        }
    }
}

pub(crate) fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let d = (n - 1) as f64;
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / d).cos())
        .collect()
}

pub(crate) fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let d = (n - 1) as f64;
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / d).cos())
        .collect()
}
