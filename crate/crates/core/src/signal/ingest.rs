//! Raw wearable recordings to EMA-aligned feature rows.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::filter::{butterworth_bandpass, FilterSpec};
use super::hrv::{extract_features, to_ibi};
use super::peaks::{detect_peaks, moving_average, PeakConfig};
use super::PpgSignal;
use crate::data::{Dataset, Sample};
use crate::error::{ensure, Error, Result};

/// One user's raw recording: `time_ms, ppg[, accel_x, accel_y, accel_z]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub time_ms: Vec<f64>,
    pub ppg: Vec<f64>,
    pub accel: Option<Vec<[f64; 3]>>,
}

impl RawRecording {
    /// Sampling rate estimated from the median timestamp step.
    pub fn sample_rate_hz(&self) -> Result<f64> {
        ensure!(
            self.time_ms.len() >= 2,
            InsufficientData,
            "recording has fewer than 2 samples"
        );
        let mut steps: Vec<f64> = self.time_ms.windows(2).map(|w| w[1] - w[0]).collect();
        steps.sort_by(f64::total_cmp);
        let step = steps[steps.len() / 2];
        ensure!(step > 0.0, Data, "recording timestamps are not increasing");
        Ok(1000.0 / step)
    }
}

pub fn parse_raw_csv<R: Read>(reader: R, source: &str) -> Result<RawRecording> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Data(format!("{source}: cannot read header: {e}")))?
        .iter()
        .map(str::to_owned)
        .collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (t_col, p_col) = match (col("time_ms"), col("ppg")) {
        (Some(t), Some(p)) => (t, p),
        _ => {
            return Err(Error::Data(format!(
                "{source}: header must contain time_ms and ppg, got {header:?}"
            )))
        }
    };
    let accel_cols = match (col("accel_x"), col("accel_y"), col("accel_z")) {
        (Some(x), Some(y), Some(z)) => Some([x, y, z]),
        (None, None, None) => None,
        _ => {
            return Err(Error::Data(format!(
                "{source}: accel_x, accel_y and accel_z must appear together"
            )))
        }
    };
    let mut rec = RawRecording {
        time_ms: Vec::new(),
        ppg: Vec::new(),
        accel: accel_cols.map(|_| Vec::new()),
    };
    let mut last_t = f64::NEG_INFINITY;
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Data(format!("{source} line {line}: {e}")))?;
        let num = |c: usize, name: &str| -> Result<f64> {
            let raw = row.get(c).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::Data(format!("{source} line {line}: bad {name} value {raw:?}"))
                })
        };
        let t = num(t_col, "time_ms")?;
        ensure!(
            t > last_t,
            Data,
            "{source} line {line}: time_ms must be strictly increasing"
        );
        last_t = t;
        rec.time_ms.push(t);
        rec.ppg.push(num(p_col, "ppg")?);
        if let (Some(cols), Some(acc)) = (accel_cols, rec.accel.as_mut()) {
            acc.push([
                num(cols[0], "accel_x")?,
                num(cols[1], "accel_y")?,
                num(cols[2], "accel_z")?,
            ]);
        }
    }
    Ok(rec)
}

pub fn read_raw_csv(path: &Path) -> Result<RawRecording> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_raw_csv(f, &path.display().to_string())
}

/// One EMA prompt: `user_id, timestamp_ms, stress_level`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaPrompt {
    pub user_id: String,
    pub timestamp_ms: i64,
    pub stress_level: i64,
}

pub fn read_ema_csv(path: &Path) -> Result<Vec<EmaPrompt>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(f);
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::Data(format!("{} line {}: {e}", path.display(), i + 2))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractionConfig {
    /// Length of the window preceding each prompt, in seconds.
    pub window_s: f64,
    pub filter: FilterSpec,
    /// Odd moving-average width in samples.
    pub smooth_window: usize,
    pub peaks: PeakConfig,
    /// Deviation of the acceleration magnitude from its median (in the
    /// accelerometer's units) above which a sample counts as motion.
    pub motion_threshold: f64,
    /// Padding added on both sides of each motion sample, in ms.
    pub motion_pad_ms: f64,
    pub include_br: bool,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            window_s: 120.0,
            filter: FilterSpec::default(),
            smooth_window: 5,
            peaks: PeakConfig::default(),
            motion_threshold: 0.3,
            motion_pad_ms: 500.0,
            include_br: false,
        }
    }
}

/// Merged motion windows (ms, relative to the slice start) for a slice of
/// accelerometer samples.
fn motion_windows(time_ms: &[f64], accel: &[[f64; 3]], cfg: &ExtractionConfig) -> Vec<(f64, f64)> {
    if accel.is_empty() {
        return Vec::new();
    }
    let mag: Vec<f64> = accel
        .iter()
        .map(|a| (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt())
        .collect();
    let mut sorted = mag.clone();
    sorted.sort_by(f64::total_cmp);
    let med = sorted[sorted.len() / 2];
    let t0 = time_ms[0];
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (t, m) in time_ms.iter().zip(&mag) {
        if (m - med).abs() <= cfg.motion_threshold {
            continue;
        }
        let (s, e) = (t - t0 - cfg.motion_pad_ms, t - t0 + cfg.motion_pad_ms);
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = e,
            _ => out.push((s, e)),
        }
    }
    out
}

/// Features for the recording window `[end − window, end)`.
pub fn window_features(
    rec: &RawRecording,
    end_ms: f64,
    cfg: &ExtractionConfig,
) -> Result<Vec<f64>> {
    let start_ms = end_ms - cfg.window_s * 1000.0;
    let lo = rec.time_ms.partition_point(|&t| t < start_ms);
    let hi = rec.time_ms.partition_point(|&t| t < end_ms);
    ensure!(
        hi > lo + 1,
        InsufficientData,
        "no signal in window ending at {end_ms}"
    );
    let fs = rec.sample_rate_hz()?;
    let raw = PpgSignal::new(rec.ppg[lo..hi].to_vec(), fs)?;
    let filtered = butterworth_bandpass(&raw, &cfg.filter)?;
    let smooth = moving_average(&filtered, cfg.smooth_window.min(filtered.len() | 1).max(1))?;
    let beats = detect_peaks(&smooth, &cfg.peaks);
    let motion = rec
        .accel
        .as_ref()
        .map(|a| motion_windows(&rec.time_ms[lo..hi], &a[lo..hi], cfg));
    let ibi = to_ibi(&beats, motion.as_deref())?;
    Ok(extract_features(&ibi).to_vec(cfg.include_br))
}

/// One feature row per prompt of `user_id`. Prompts whose window yields no
/// usable beats are skipped; the skip count is returned alongside.
pub fn extract_dataset(
    rec: &RawRecording,
    prompts: &[EmaPrompt],
    user_id: &str,
    cfg: &ExtractionConfig,
) -> Result<(Dataset, usize)> {
    let mut samples = Vec::new();
    let mut skipped = 0;
    for p in prompts.iter().filter(|p| p.user_id == user_id) {
        match window_features(rec, p.timestamp_ms as f64, cfg) {
            Ok(features) => samples.push(Sample {
                user_id: p.user_id.clone(),
                timestamp_ms: p.timestamp_ms,
                features,
                stress_level: p.stress_level,
            }),
            Err(Error::InsufficientData(msg)) => {
                log::warn!("user {user_id} prompt at {}: {msg}", p.timestamp_ms);
                skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok((Dataset::new(samples)?, skipped))
}
