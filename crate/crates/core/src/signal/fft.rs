//! One-sided spectra of real signals.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{MfamError, Result};

/// One-sided spectrum of a real signal: bins `0..=T/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub bins: Vec<Complex64>,
    pub fs: f64,
    /// Length of the originating signal.
    pub len: usize,
}

impl Spectrum {
    /// Frequency of bin `k` in Hz.
    pub fn frequency(&self, k: usize) -> f64 {
        bin_frequency(k, self.len, self.fs)
    }
}

pub fn bin_frequency(k: usize, len: usize, fs: f64) -> f64 {
    k as f64 * fs / len as f64
}

/// Number of one-sided bins for a length-`len` real signal.
pub fn num_bins(len: usize) -> usize {
    len / 2 + 1
}

/// Forward transform, `bins[k] = Σ_t x[t] e^{-2πi kt/T}` for `k ≤ T/2`.
pub fn rfft(x: &[f64], fs: f64) -> Result<Spectrum> {
    if x.len() < 2 {
        return Err(MfamError::Length(format!(
            "rfft needs at least 2 samples, got {}",
            x.len()
        )));
    }
    let n = x.len();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.truncate(num_bins(n));
    Ok(Spectrum {
        bins: buf,
        fs,
        len: n,
    })
}

/// Inverse of [`rfft`] for a real signal of length `len`.
pub fn irfft(s: &Spectrum, len: usize) -> Result<Vec<f64>> {
    if s.len != len || s.bins.len() != num_bins(len) {
        return Err(MfamError::Length(format!(
            "spectrum of a length-{} signal ({} bins) cannot invert to length {len}",
            s.len,
            s.bins.len()
        )));
    }
    let mut full = vec![Complex64::new(0.0, 0.0); len];
    full[..s.bins.len()].copy_from_slice(&s.bins);
    // real DC and (even length) Nyquist bins
    full[0].im = 0.0;
    if len % 2 == 0 {
        full[len / 2].im = 0.0;
    }
    for k in 1..(len + 1) / 2 {
        full[len - k] = s.bins[k].conj();
    }
    FftPlanner::new().plan_fft_inverse(len).process(&mut full);
    let scale = 1.0 / len as f64;
    Ok(full.into_iter().map(|c| c.re * scale).collect())
}
