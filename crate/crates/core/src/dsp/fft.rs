//! Radix-2 FFT for real frames.
//!
//! Window lengths in this toolkit are powers of two, so a plain iterative
//! Cooley-Tukey transform is all that is needed. Real input/output is
//! handled by round-tripping through the complex transform; frame sizes are
//! small enough that the factor-two overhead is irrelevant.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use num_complex::Complex64;

pub struct RealFft {
    n: usize,
    /// Forward twiddles e^{-2*pi*i*k/n} for k in 0..n/2.
    twiddles: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl RealFft {
    /// `n` must be a power of two, at least 2 (checked by `StftConfig`).
    pub fn new(n: usize) -> Self {
        debug_assert!(n.is_power_of_two() && n >= 2);
        let twiddles = (0..n / 2)
            .map(|k| {
                let angle = -2.0 * PI * k as f64 / n as f64;
                Complex64::new(libm::cos(angle), libm::sin(angle))
            })
            .collect();
        Self { n, twiddles, scratch: vec![Complex64::new(0.0, 0.0); n] }
    }

    /// Number of non-negative frequency bins, n/2 + 1.
    pub fn bins(&self) -> usize {
        self.n / 2 + 1
    }

    fn fft_in_place(buf: &mut [Complex64], twiddles: &[Complex64], conjugate: bool) {
        let n = buf.len();
        // bit-reversal permutation
        let mut j = 0usize;
        for i in 1..n {
            let mut bit = n >> 1;
            while j & bit != 0 {
                j ^= bit;
                bit >>= 1;
            }
            j |= bit;
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..len / 2 {
                    let mut w = twiddles[k * stride];
                    if conjugate {
                        w = w.conj();
                    }
                    let a = buf[start + k];
                    let b = buf[start + k + len / 2] * w;
                    buf[start + k] = a + b;
                    buf[start + k + len / 2] = a - b;
                }
            }
            len <<= 1;
        }
    }

    /// Forward transform of one real frame; returns the n/2+1 non-negative
    /// frequency bins.
    pub fn forward(&mut self, frame: &[f64], out: &mut [Complex64]) {
        debug_assert_eq!(frame.len(), self.n);
        debug_assert_eq!(out.len(), self.bins());
        for (s, &x) in self.scratch.iter_mut().zip(frame) {
            *s = Complex64::new(x, 0.0);
        }
        Self::fft_in_place(&mut self.scratch, &self.twiddles, false);
        out.copy_from_slice(&self.scratch[..self.bins()]);
    }

    /// Inverse transform from the one-sided spectrum back to a real frame.
    /// The missing bins are reconstructed by Hermitian symmetry.
    pub fn inverse(&mut self, spectrum: &[Complex64], out: &mut [f64]) {
        debug_assert_eq!(spectrum.len(), self.bins());
        debug_assert_eq!(out.len(), self.n);
        let n = self.n;
        let bins = self.bins();
        self.scratch[..bins].copy_from_slice(spectrum);
        for k in bins..n {
            self.scratch[k] = spectrum[n - k].conj();
        }
        Self::fft_in_place(&mut self.scratch, &self.twiddles, true);
        let scale = 1.0 / n as f64;
        for (o, s) in out.iter_mut().zip(&self.scratch) {
            *o = s.re * scale;
        }
    }
}
