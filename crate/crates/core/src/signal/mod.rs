//! Real-signal spectra and frequency-band decomposition.

mod fdm;
mod fft;

pub use fdm::{band_mask, decompose_channel, energy, frequency_decompose, Band, BandMask, BandSet};
pub use fft::{bin_frequency, irfft, num_bins, rfft, Spectrum};
pub use rustfft::num_complex::Complex64;
