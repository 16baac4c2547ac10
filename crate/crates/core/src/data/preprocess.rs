use super::recording::Recording;
use crate::error::{MfamError, Result};

/// Window and stride, in samples, of the 1-second / 50%-overlap grid.
pub fn grid(fs: f64) -> (usize, usize) {
    let window = fs.round().max(1.0) as usize;
    let stride = (fs / 2.0).round().max(1.0) as usize;
    (window, stride)
}

/// Longest prefix length tiled exactly by the grid.
pub fn grid_length(len: usize, window: usize, stride: usize) -> usize {
    if len < window {
        return len;
    }
    (len - window) / stride * stride + window
}

/// Number of grid windows in a length-`len` series.
pub fn grid_windows(len: usize, window: usize, stride: usize) -> usize {
    if len < window {
        0
    } else {
        (len - window) / stride + 1
    }
}

/// Truncates to the window grid, then z-scores each channel. Channels with
/// standard deviation below 1e-8 are only centred.
pub fn preprocess(rec: &Recording) -> Result<Recording> {
    rec.check_min_length()?;
    let (window, stride) = grid(rec.fs);
    let keep = grid_length(rec.len(), window, stride);
    if keep == 0 {
        return Err(MfamError::Length("nothing left after grid truncation".into()));
    }
    let channels = rec
        .channels
        .iter()
        .map(|ch| zscore(&ch[..keep]))
        .collect();
    let mut out = rec.clone();
    out.channels = channels;
    Ok(out)
}

fn zscore(x: &[f64]) -> Vec<f64> {
    if x.iter().all(|&v| v == x[0]) {
        return vec![0.0; x.len()];
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    let scale = if sd < 1e-8 { 1.0 } else { sd };
    x.iter().map(|v| (v - mean) / scale).collect()
}
