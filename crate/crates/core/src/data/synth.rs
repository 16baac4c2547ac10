//! Synthetic sparse-tremor recordings with ground-truth burst spans.
//!
//! Every channel carries a slow background (two or three sinusoids between
//! 0.5 and 2 Hz) plus white noise. Recordings of a positive class also get
//! a handful of short Hann-windowed bursts at a frequency in the central
//! half of `burst_band`, each confined to one cell of the 1-second /
//! 50%-overlap window grid. Burst amplitude is multiplied by a per-subject gain so the
//! subjects differ in a way that has nothing to do with the label.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::preprocess::{grid, grid_windows};
use super::recording::{Recording, CHANNELS};
use crate::error::{MfamError, Result};
use crate::signal::Band;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassMode {
    /// Label 0 (no bursts) or 1.
    #[default]
    Binary,
    /// Severity 0..=3; burst count and amplitude grow with the level.
    FourLevel,
}

impl ClassMode {
    pub fn num_classes(self) -> usize {
        match self {
            ClassMode::Binary => 2,
            ClassMode::FourLevel => 4,
        }
    }
}

/// Generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_subjects: usize,
    pub recordings_per_subject: usize,
    pub duration_s: f64,
    pub fs: f64,
    pub activity: String,
    pub burst_band: Band,
    /// Fraction of grid windows that receive a burst (before severity
    /// scaling).
    pub burst_density: f64,
    pub burst_amplitude: f64,
    pub noise_amplitude: f64,
    pub background_amplitude: f64,
    /// Subject gains are drawn from `1 ± subject_gain_spread`.
    pub subject_gain_spread: f64,
    pub classes: ClassMode,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_subjects: 8,
            recordings_per_subject: 6,
            duration_s: 10.0,
            fs: 100.0,
            activity: "rest".into(),
            burst_band: Band::new(3.0, 7.0),
            burst_density: 0.1,
            burst_amplitude: 2.0,
            noise_amplitude: 0.05,
            background_amplitude: 1.0,
            subject_gain_spread: 0.3,
            classes: ClassMode::Binary,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(MfamError::config(m));
        if self.num_subjects == 0 || self.recordings_per_subject == 0 {
            return fail("num_subjects and recordings_per_subject must be positive".into());
        }
        if !(self.fs > 0.0) {
            return fail(format!("fs must be positive, got {}", self.fs));
        }
        if !(self.duration_s >= 1.0) {
            return fail(format!("duration_s must be at least 1, got {}", self.duration_s));
        }
        if !(self.burst_density > 0.0 && self.burst_density <= 1.0) {
            return fail(format!(
                "burst_density must lie in (0, 1], got {}",
                self.burst_density
            ));
        }
        for (name, v) in [
            ("burst_amplitude", self.burst_amplitude),
            ("noise_amplitude", self.noise_amplitude),
            ("background_amplitude", self.background_amplitude),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be >= 0, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.subject_gain_spread) {
            return fail(format!(
                "subject_gain_spread must lie in [0, 1), got {}",
                self.subject_gain_spread
            ));
        }
        let b = self.burst_band;
        if !(b.low > 0.0 && b.low < b.high && b.high <= self.fs / 2.0) {
            return fail(format!(
                "burst_band [{}, {}) must lie inside (0, {}]",
                b.low,
                b.high,
                self.fs / 2.0
            ));
        }
        if self.activity.is_empty() || self.activity.contains(['_', ',']) {
            return fail(format!("activity {:?} must be nonempty without '_' or ','", self.activity));
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        (self.duration_s * self.fs).round() as usize
    }

    /// Burst count and amplitude multiplier for a severity level.
    fn severity(&self, level: usize) -> (f64, f64) {
        match (self.classes, level) {
            (_, 0) => (0.0, 0.0),
            (ClassMode::Binary, _) => (1.0, 1.0),
            (ClassMode::FourLevel, l) => (l as f64, 0.4 + 0.2 * l as f64),
        }
    }
}

/// Sample spans `[start, end)` where bursts were injected.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BurstAnnotation {
    pub spans: Vec<(usize, usize)>,
}

/// A generated recording, its annotation, and its ordinal within the
/// subject.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthRecording {
    pub recording: Recording,
    pub bursts: BurstAnnotation,
    pub index: usize,
}

pub fn subject_name(s: usize) -> String {
    format!("s{s:02}")
}

/// Generates `num_subjects * recordings_per_subject` recordings, ordered by
/// subject then index. Labels cycle through the classes within each subject
/// so every subject contributes recordings of every class.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Vec<SynthRecording>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = spec.classes.num_classes();
    let spread = spec.subject_gain_spread;
    let mut out = Vec::with_capacity(spec.num_subjects * spec.recordings_per_subject);
    for s in 0..spec.num_subjects {
        let gain = 1.0 + rng.random_range(-1.0..=1.0) * spread;
        for r in 0..spec.recordings_per_subject {
            let label = (r + s) % k;
            let (channels, spans) = generate_signal(spec, label, gain, &mut rng)?;
            let recording =
                Recording::new(subject_name(s), spec.activity.clone(), label, spec.fs, channels)?;
            out.push(SynthRecording {
                recording,
                bursts: BurstAnnotation { spans },
                index: r,
            });
        }
    }
    Ok(out)
}

fn generate_signal(
    spec: &SynthSpec,
    level: usize,
    gain: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Vec<f64>>, Vec<(usize, usize)>)> {
    let t = spec.num_samples();
    let fs = spec.fs;
    let noise = Normal::new(0.0, spec.noise_amplitude.max(f64::MIN_POSITIVE))
        .map_err(|e| MfamError::config(e.to_string()))?;
    let mut channels = Vec::with_capacity(CHANNELS.len());
    for _ in CHANNELS {
        let mut x = vec![0.0; t];
        let components = rng.random_range(2..=3);
        for _ in 0..components {
            let f = rng.random_range(0.5..2.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            let amp = spec.background_amplitude * rng.random_range(0.5..1.0);
            for (i, v) in x.iter_mut().enumerate() {
                *v += amp * (2.0 * PI * f * i as f64 / fs + phase).sin();
            }
        }
        if spec.noise_amplitude > 0.0 {
            for v in x.iter_mut() {
                *v += noise.sample(rng);
            }
        }
        channels.push(x);
    }

    let (count_scale, amp_scale) = spec.severity(level);
    if count_scale == 0.0 {
        return Ok((channels, Vec::new()));
    }
    let (window, stride) = grid(fs);
    let n_windows = grid_windows(t, window, stride);
    let wanted = ((spec.burst_density * count_scale * n_windows as f64).round() as usize).max(1);
    let cells = pick_cells(n_windows, wanted, rng);
    let amplitude = spec.burst_amplitude * amp_scale * gain;
    // central half of the band, so the envelope's main lobe stays inside it
    let quarter = (spec.burst_band.high - spec.burst_band.low) / 4.0;
    let (lo, hi) = (spec.burst_band.low + quarter, spec.burst_band.high - quarter);
    let mut spans = Vec::with_capacity(cells.len());
    for cell in cells {
        let start = cell * stride;
        let end = (start + window).min(t);
        let f = rng.random_range(lo..hi);
        let phase = rng.random_range(0.0..2.0 * PI);
        let len = end - start;
        for x in channels.iter_mut() {
            let mix = rng.random_range(0.7..1.0);
            for j in 0..len {
                let hann = 0.5 - 0.5 * (2.0 * PI * j as f64 / (len - 1).max(1) as f64).cos();
                x[start + j] +=
                    amplitude * mix * hann * (2.0 * PI * f * j as f64 / fs + phase).sin();
            }
        }
        spans.push((start, end));
    }
    Ok((channels, spans))
}

/// Picks up to `wanted` interior grid cells, no two adjacent (adjacent cells
/// overlap by half a window), returned in ascending order.
fn pick_cells(n_windows: usize, wanted: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut candidates: Vec<usize> = if n_windows > 2 {
        (1..n_windows - 1).collect()
    } else {
        (0..n_windows).collect()
    };
    candidates.shuffle(rng);
    let mut chosen: Vec<usize> = Vec::with_capacity(wanted);
    for c in candidates {
        if chosen.len() == wanted {
            break;
        }
        if chosen.iter().all(|&o| o.abs_diff(c) >= 2) {
            chosen.push(c);
        }
    }
    chosen.sort_unstable();
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_is_valid() {
        SynthSpec::default().validate().unwrap();
        let spec = SynthSpec {
            burst_density: 0.0,
            ..SynthSpec::default()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn ten_second_positive_has_two_bursts() {
        let spec = SynthSpec {
            num_subjects: 2,
            recordings_per_subject: 2,
            ..SynthSpec::default()
        };
        let data = synth_generate(&spec, 42).unwrap();
        for r in &data {
            if r.recording.label == 1 {
                assert_eq!(r.bursts.spans.len(), 2);
                for &(s, e) in &r.bursts.spans {
                    assert_eq!(e - s, 100);
                    assert_eq!(s % 50, 0);
                    // interior cells only
                    assert!(s >= 50 && e <= 950);
                }
                let (a, b) = (r.bursts.spans[0], r.bursts.spans[1]);
                assert!(a.1 <= b.0, "bursts overlap: {a:?} {b:?}");
            } else {
                assert!(r.bursts.spans.is_empty());
            }
        }
    }

    #[test]
    fn four_level_scales_burst_count() {
        let spec = SynthSpec {
            num_subjects: 1,
            recordings_per_subject: 4,
            classes: ClassMode::FourLevel,
            ..SynthSpec::default()
        };
        let data = synth_generate(&spec, 1).unwrap();
        let counts: Vec<(usize, usize)> = data
            .iter()
            .map(|r| (r.recording.label, r.bursts.spans.len()))
            .collect();
        assert_eq!(counts, vec![(0, 0), (1, 2), (2, 4), (3, 6)]);
    }

    #[test]
    fn deterministic_in_seed() {
        let spec = SynthSpec {
            num_subjects: 2,
            ..SynthSpec::default()
        };
        assert_eq!(synth_generate(&spec, 9).unwrap(), synth_generate(&spec, 9).unwrap());
        assert_ne!(synth_generate(&spec, 9).unwrap(), synth_generate(&spec, 10).unwrap());
    }
}
