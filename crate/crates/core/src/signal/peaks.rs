use serde::{Deserialize, Serialize};

use super::PpgSignal;
use crate::error::{ensure, Result};

/// Centered moving average; the window shrinks at the boundaries.
pub fn moving_average(signal: &PpgSignal, window: usize) -> Result<PpgSignal> {
    let x = &signal.samples;
    ensure!(
        window >= 1 && window % 2 == 1,
        Config,
        "moving-average window must be odd and positive, got {window}"
    );
    ensure!(
        window <= x.len(),
        Config,
        "moving-average window {window} exceeds signal length {}",
        x.len()
    );
    let half = window / 2;
    let prefix = prefix_sums(x.iter().copied());
    let samples = (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(x.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect();
    Ok(PpgSignal {
        samples,
        sample_rate_hz: signal.sample_rate_hz,
    })
}

fn prefix_sums(x: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out = vec![0.0];
    let mut acc = 0.0;
    for v in x {
        acc += v;
        out.push(acc);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PeakConfig {
    /// Rolling window for the adaptive threshold, in seconds.
    pub window_s: f64,
    /// Threshold = rolling mean + k · rolling std.
    pub k: f64,
    pub refractory_ms: f64,
}

impl Default for PeakConfig {
    fn default() -> Self {
        Self {
            window_s: 0.75,
            k: 0.5,
            refractory_ms: 300.0,
        }
    }
}

/// Beat timestamps (ms from signal start) of local maxima that clear an
/// adaptive threshold. Candidates closer than the refractory period compete
/// and only the taller one survives. Peak times are refined by parabolic
/// interpolation.
pub fn detect_peaks(signal: &PpgSignal, cfg: &PeakConfig) -> Vec<f64> {
    let x = &signal.samples;
    let n = x.len();
    if n < 3 {
        return Vec::new();
    }
    let fs = signal.sample_rate_hz;
    let win = ((cfg.window_s * fs).round() as usize).max(1) | 1;
    let half = win / 2;
    let s1 = prefix_sums(x.iter().copied());
    let s2 = prefix_sums(x.iter().map(|v| v * v));
    let threshold = |i: usize| {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        let m = (hi - lo) as f64;
        let mean = (s1[hi] - s1[lo]) / m;
        let var = ((s2[hi] - s2[lo]) / m - mean * mean).max(0.0);
        mean + cfg.k * var.sqrt()
    };

    let mut kept: Vec<(usize, f64)> = Vec::new();
    for i in 1..n - 1 {
        if !(x[i] > x[i - 1] && x[i] >= x[i + 1] && x[i] > threshold(i)) {
            continue;
        }
        let denom = x[i - 1] - 2.0 * x[i] + x[i + 1];
        let offset = if denom != 0.0 {
            (0.5 * (x[i - 1] - x[i + 1]) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        let t = (i as f64 + offset) * 1000.0 / fs;
        match kept.last_mut() {
            Some(last) if t - last.1 < cfg.refractory_ms => {
                if x[i] > x[last.0] {
                    *last = (i, t);
                }
            }
            _ => kept.push((i, t)),
        }
    }
    kept.into_iter().map(|(_, t)| t).collect()
}
