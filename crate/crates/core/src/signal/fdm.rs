//! Band-splitting of multichannel signals by spectral masking.
//!
//! Each channel is transformed, multiplied by a binary mask per band and
//! transformed back; band outputs are stacked band-major, so output channel
//! `b * C + c` is channel `c` restricted to band `b`.

use serde::{Deserialize, Serialize};

use super::fft::{bin_frequency, irfft, num_bins, rfft};
use crate::error::{MfamError, Result};
use crate::tensor::Tensor;

/// A frequency interval `[low, high)` in Hz.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub low: f64,
    pub high: f64,
}

impl Band {
    pub fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }
}

/// Ordered, pairwise disjoint list of bands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BandSet {
    bands: Vec<Band>,
}

impl Default for BandSet {
    /// 0.5–3, 3–7 and 7–12 Hz.
    fn default() -> Self {
        Self {
            bands: vec![Band::new(0.5, 3.0), Band::new(3.0, 7.0), Band::new(7.0, 12.0)],
        }
    }
}

impl BandSet {
    pub fn new(bands: Vec<Band>) -> Result<Self> {
        if bands.is_empty() {
            return Err(MfamError::Domain("band set is empty".into()));
        }
        for b in &bands {
            if !(b.low >= 0.0 && b.low < b.high && b.high.is_finite()) {
                return Err(MfamError::Domain(format!(
                    "invalid band [{}, {}) Hz",
                    b.low, b.high
                )));
            }
        }
        let mut sorted = bands.clone();
        sorted.sort_by(|a, b| a.low.total_cmp(&b.low));
        for w in sorted.windows(2) {
            if w[1].low < w[0].high {
                return Err(MfamError::Domain(format!(
                    "bands [{}, {}) and [{}, {}) overlap",
                    w[0].low, w[0].high, w[1].low, w[1].high
                )));
            }
        }
        Ok(Self { bands })
    }

    /// Parses `"0.5-3,3-7,7-12"`.
    pub fn parse(spec: &str) -> Result<Self> {
        let bands = spec
            .split(',')
            .map(|part| {
                let (lo, hi) = part.trim().split_once('-').ok_or_else(|| {
                    MfamError::Domain(format!("band {part:?} is not of the form low-high"))
                })?;
                let num = |s: &str| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| MfamError::Domain(format!("bad frequency {s:?}")))
                };
                Ok(Band::new(num(lo)?, num(hi)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(bands)
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    /// Checks every band against the Nyquist limit of `fs`.
    pub fn validate(&self, fs: f64) -> Result<()> {
        Self::new(self.bands.clone())?;
        for b in &self.bands {
            check_band(fs, b.low, b.high)?;
        }
        Ok(())
    }
}

/// Binary spectral mask over the one-sided bins.
#[derive(Clone, Debug, PartialEq)]
pub struct BandMask {
    pub values: Vec<bool>,
}

impl BandMask {
    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }
}

fn check_band(fs: f64, low: f64, high: f64) -> Result<()> {
    if !(fs > 0.0) {
        return Err(MfamError::Domain(format!("sampling rate must be positive, got {fs}")));
    }
    if !(0.0 <= low && low < high && high <= fs / 2.0) {
        return Err(MfamError::Domain(format!(
            "band [{low}, {high}) Hz must satisfy 0 <= low < high <= {} (Nyquist)",
            fs / 2.0
        )));
    }
    Ok(())
}

/// Mask selecting bins with `low <= k * fs / T < high`. A band whose upper
/// edge is exactly Nyquist also takes the Nyquist bin.
pub fn band_mask(len: usize, fs: f64, low: f64, high: f64) -> Result<BandMask> {
    check_band(fs, low, high)?;
    let nyquist = fs / 2.0;
    let values = (0..num_bins(len))
        .map(|k| {
            let f = bin_frequency(k, len, fs);
            (low <= f && f < high) || (high == nyquist && f == nyquist)
        })
        .collect();
    Ok(BandMask { values })
}

/// Splits a single channel into its band components.
pub fn decompose_channel(x: &[f64], bands: &BandSet, fs: f64) -> Result<Vec<Vec<f64>>> {
    let spec = rfft(x, fs)?;
    bands
        .bands()
        .iter()
        .map(|b| {
            let mask = band_mask(x.len(), fs, b.low, b.high)?;
            let mut masked = spec.clone();
            for (bin, &keep) in masked.bins.iter_mut().zip(&mask.values) {
                if !keep {
                    *bin = Default::default();
                }
            }
            irfft(&masked, x.len())
        })
        .collect()
}

/// `[C, T]` input to `[C * |B|, T]` output, band-major.
pub fn frequency_decompose(x: &Tensor, bands: &BandSet, fs: f64) -> Result<Tensor> {
    if x.ndim() != 2 {
        return Err(MfamError::shape(format!(
            "frequency_decompose expects [C,T], got {:?}",
            x.shape()
        )));
    }
    bands.validate(fs)?;
    let (c, t) = (x.rows(), x.cols());
    let nb = bands.len();
    let mut out = vec![0.0; nb * c * t];
    for ch in 0..c {
        let parts = decompose_channel(x.row(ch), bands, fs)?;
        for (b, part) in parts.into_iter().enumerate() {
            let row = b * c + ch;
            out[row * t..(row + 1) * t].copy_from_slice(&part);
        }
    }
    Tensor::new(vec![nb * c, t], out)
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_half_open_bins() {
        let m = band_mask(200, 100.0, 3.0, 7.0).unwrap();
        let on: Vec<usize> = (0..m.values.len()).filter(|&k| m.values[k]).collect();
        assert_eq!(on, (6..=13).collect::<Vec<_>>());
    }

    #[test]
    fn mask_rejects_bad_bands() {
        assert!(band_mask(200, 100.0, 0.0, 50.0 + 1e-9).is_err());
        assert!(band_mask(200, 100.0, 7.0, 3.0).is_err());
        assert!(band_mask(200, 100.0, 0.0, 50.0).is_ok());
    }

    #[test]
    fn default_masks_disjoint() {
        let bands = BandSet::default();
        let masks: Vec<_> = bands
            .bands()
            .iter()
            .map(|b| band_mask(200, 100.0, b.low, b.high).unwrap())
            .collect();
        for k in 0..num_bins(200) {
            assert!(masks.iter().filter(|m| m.values[k]).count() <= 1);
        }
    }

    #[test]
    fn parse_and_validate() {
        let b = BandSet::parse("0.5-3, 3-7,7-12").unwrap();
        assert_eq!(b, BandSet::default());
        assert!(BandSet::parse("3-7,5-9").is_err());
        assert!(BandSet::parse("3").is_err());
        assert!(BandSet::parse("10-60").unwrap().validate(100.0).is_err());
    }

    #[test]
    fn zero_input_output_shape() {
        let x = Tensor::zeros(&[6, 128]);
        let y = frequency_decompose(&x, &BandSet::default(), 100.0).unwrap();
        assert_eq!(y.shape(), &[18, 128]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_is_band_major() {
        let t = 400;
        let tone = |f: f64| -> Vec<f64> {
            (0..t)
                .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / 100.0).sin())
                .collect()
        };
        let x = Tensor::from_rows(&[tone(1.0), tone(10.0)]).unwrap();
        let y = frequency_decompose(&x, &BandSet::default(), 100.0).unwrap();
        let e: Vec<f64> = (0..6).map(|r| energy(y.row(r))).collect();
        // rows: (band0,ch0) (band0,ch1) (band1,ch0) (band1,ch1) (band2,ch0) (band2,ch1)
        assert!(e[0] > 100.0 && e[5] > 100.0);
        for r in [1, 2, 3, 4] {
            assert!(e[r] < 1e-12, "row {r} energy {}", e[r]);
        }
    }
}
