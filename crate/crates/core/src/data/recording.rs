//! Multichannel motion recordings and their CSV form.
//!
//! A recording file has a header `time,ax,ay,az,gx,gy,gz` (extra columns are
//! ignored) and one row per sample; `time` is in seconds and strictly
//! increasing. Subject, activity and label come either from a manifest or
//! from the file name `<subject>_<activity>_<label>[_<suffix>].csv`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{MfamError, Result};
use crate::tensor::Tensor;

pub const CHANNELS: [&str; 6] = ["ax", "ay", "az", "gx", "gy", "gz"];
pub const DEFAULT_FS: f64 = 100.0;

/// One subject performing one activity.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    pub activity: String,
    pub label: usize,
    pub fs: f64,
    pub channel_names: Vec<String>,
    /// One series per channel, all of equal length.
    pub channels: Vec<Vec<f64>>,
}

impl Recording {
    pub fn new(
        subject_id: impl Into<String>,
        activity: impl Into<String>,
        label: usize,
        fs: f64,
        channels: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let names = CHANNELS.iter().map(|s| s.to_string()).collect();
        Self::with_names(subject_id, activity, label, fs, names, channels)
    }

    pub fn with_names(
        subject_id: impl Into<String>,
        activity: impl Into<String>,
        label: usize,
        fs: f64,
        channel_names: Vec<String>,
        channels: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(MfamError::Domain(format!("sampling rate must be positive, got {fs}")));
        }
        if channels.is_empty() || channel_names.len() != channels.len() {
            return Err(MfamError::shape(format!(
                "{} channel names for {} channels",
                channel_names.len(),
                channels.len()
            )));
        }
        let t = channels[0].len();
        if channels.iter().any(|c| c.len() != t) {
            return Err(MfamError::Length("channels differ in length".into()));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            activity: activity.into(),
            label,
            fs,
            channel_names,
            channels,
        })
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.fs
    }

    /// `[C, T]` view of the samples.
    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(
            vec![self.num_channels(), self.len()],
            self.channels.concat(),
        )
    }

    /// Requires at least one second of data.
    pub fn check_min_length(&self) -> Result<()> {
        if (self.len() as f64) < self.fs {
            return Err(MfamError::Length(format!(
                "recording {}/{} has {} samples, fewer than one second at {} Hz",
                self.subject_id,
                self.activity,
                self.len(),
                self.fs
            )));
        }
        Ok(())
    }
}

/// `(subject, activity, label)` from a file name.
pub fn parse_file_name(path: &Path) -> Result<(String, String, usize)> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| MfamError::format(path, "file name is not valid UTF-8"))?;
    let parts: Vec<&str> = stem.split('_').collect();
    if parts.len() < 3 || parts[0].is_empty() || parts[1].is_empty() {
        return Err(MfamError::format(
            path,
            "file name must follow <subject>_<activity>_<label>.csv",
        ));
    }
    let label = parts[2]
        .parse()
        .map_err(|_| MfamError::format(path, format!("label {:?} is not an integer", parts[2])))?;
    Ok((parts[0].to_string(), parts[1].to_string(), label))
}

/// Loads a recording, taking its metadata from the file name.
pub fn load_recording(path: &Path) -> Result<Recording> {
    let (subject, activity, label) = parse_file_name(path)?;
    load_recording_as(path, &subject, &activity, label)
}

/// Loads a recording with explicit metadata.
pub fn load_recording_as(
    path: &Path,
    subject: &str,
    activity: &str,
    label: usize,
) -> Result<Recording> {
    let file = File::open(path).map_err(|e| MfamError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let time_col =
        column("time").ok_or_else(|| MfamError::format(path, "missing time column"))?;
    let mut cols = Vec::with_capacity(CHANNELS.len());
    for ch in CHANNELS {
        let c = column(ch)
            .ok_or_else(|| MfamError::format(path, format!("missing channel {ch}")))?;
        cols.push(c);
    }

    let mut times = Vec::new();
    let mut channels = vec![Vec::new(); CHANNELS.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let field = |c: usize| -> Result<f64> {
            let raw = record.get(c).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| {
                MfamError::format(
                    path,
                    format!("row {}: {:?} is not a number", row + 1, raw),
                )
            })?;
            if !v.is_finite() {
                return Err(MfamError::format(
                    path,
                    format!("row {}: non-finite value", row + 1),
                ));
            }
            Ok(v)
        };
        let t = field(time_col)?;
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(MfamError::format(
                    path,
                    format!("time is not strictly increasing at row {}", row + 1),
                ));
            }
        }
        times.push(t);
        for (series, &c) in channels.iter_mut().zip(&cols) {
            series.push(field(c)?);
        }
    }
    if times.is_empty() {
        return Err(MfamError::format(path, "no samples"));
    }
    let fs = estimate_fs(&times);
    Recording::new(subject, activity, label, fs, channels)
}

/// Mean sampling rate implied by the time column, rounded to 1e-6 Hz.
fn estimate_fs(times: &[f64]) -> f64 {
    if times.len() < 2 {
        return DEFAULT_FS;
    }
    let span = times[times.len() - 1] - times[0];
    let fs = (times.len() - 1) as f64 / span;
    (fs * 1e6).round() / 1e6
}

/// Writes the CSV form read by [`load_recording`].
pub fn write_recording(path: &Path, rec: &Recording) -> Result<()> {
    let file = File::create(path).map_err(|e| MfamError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| MfamError::io(path, e);
    write!(w, "time").map_err(io)?;
    for name in &rec.channel_names {
        write!(w, ",{name}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for t in 0..rec.len() {
        write!(w, "{}", t as f64 / rec.fs).map_err(io)?;
        for ch in &rec.channels {
            write!(w, ",{}", ch[t]).map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn parses_small_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "s01_rest_1.csv",
            "time,ax,ay,az,gx,gy,gz\n0,1,2,3,4,5,6\n0.01,1,2,3,4,5,6\n0.02,1,2,3,4,5,7\n",
        );
        let r = load_recording(&p).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r.subject_id, "s01");
        assert_eq!(r.activity, "rest");
        assert_eq!(r.label, 1);
        assert_eq!(r.fs, 100.0);
        assert_eq!(r.channels[5], vec![6.0, 6.0, 7.0]);
        assert!(r.check_min_length().is_err());
    }

    #[test]
    fn missing_channel_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "s01_rest_0.csv", "time,ax,ay,az,gx,gy\n0,1,2,3,4,5\n");
        let err = load_recording(&p).unwrap_err();
        assert!(err.to_string().contains("missing channel gz"), "{err}");
    }

    #[test]
    fn non_monotone_time_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "s01_rest_0.csv",
            "time,ax,ay,az,gx,gy,gz\n0,1,2,3,4,5,6\n0.02,1,2,3,4,5,6\n0.01,1,2,3,4,5,6\n",
        );
        let err = load_recording(&p).unwrap_err();
        assert!(err.to_string().contains("strictly increasing"), "{err}");
    }

    #[test]
    fn bad_file_name_rejected() {
        assert!(parse_file_name(Path::new("foo.csv")).is_err());
        assert!(parse_file_name(Path::new("s1_walk_x.csv")).is_err());
        assert_eq!(
            parse_file_name(Path::new("s1_walk_2_007.csv")).unwrap(),
            ("s1".into(), "walk".into(), 2)
        );
    }

    #[test]
    fn write_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let channels: Vec<Vec<f64>> = (0..6)
            .map(|c| (0..250).map(|t| ((t * (c + 1)) as f64 * 0.013).sin() / 3.0).collect())
            .collect();
        let rec = Recording::new("s07", "walk", 3, 100.0, channels).unwrap();
        let p = dir.path().join("s07_walk_3.csv");
        write_recording(&p, &rec).unwrap();
        assert_eq!(load_recording(&p).unwrap(), rec);
    }
}
