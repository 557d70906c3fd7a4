//! Time-domain and Poincaré HRV features plus a breathing-rate estimate.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

pub const IBI_MIN_MS: f64 = 300.0;
pub const IBI_MAX_MS: f64 = 2000.0;

/// Inter-beat intervals in milliseconds, all inside the plausibility window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbiSeries {
    intervals_ms: Vec<f64>,
}

impl IbiSeries {
    pub fn new(intervals_ms: Vec<f64>) -> Result<Self> {
        ensure!(
            intervals_ms.len() >= 2,
            InsufficientData,
            "need at least 2 inter-beat intervals, got {}",
            intervals_ms.len()
        );
        if let Some(bad) = intervals_ms
            .iter()
            .find(|v| !(IBI_MIN_MS..=IBI_MAX_MS).contains(*v))
        {
            return Err(crate::Error::Data(format!(
                "inter-beat interval {bad} ms outside [{IBI_MIN_MS}, {IBI_MAX_MS}]"
            )));
        }
        Ok(Self { intervals_ms })
    }

    pub fn intervals(&self) -> &[f64] {
        &self.intervals_ms
    }
}

/// Successive beat differences with artifact rejection. Intervals outside
/// the plausibility window are dropped, as are intervals overlapping any
/// motion window `(start_ms, end_ms)`.
pub fn to_ibi(timestamps_ms: &[f64], motion: Option<&[(f64, f64)]>) -> Result<IbiSeries> {
    ensure!(
        timestamps_ms.len() >= 2,
        InsufficientData,
        "need at least 2 beats, got {}",
        timestamps_ms.len()
    );
    let intervals: Vec<f64> = timestamps_ms
        .windows(2)
        .filter(|w| {
            let clean = motion.is_none_or(|m| m.iter().all(|&(s, e)| w[1] < s || w[0] > e));
            clean && (IBI_MIN_MS..=IBI_MAX_MS).contains(&(w[1] - w[0]))
        })
        .map(|w| w[1] - w[0])
        .collect();
    ensure!(
        intervals.len() >= 2,
        InsufficientData,
        "only {} valid inter-beat intervals after artifact rejection",
        intervals.len()
    );
    IbiSeries::new(intervals)
}

/// The HRV feature vector. Fields that need more intervals than were
/// available are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrvFeatures {
    pub bpm: f64,
    pub ibi_mean: f64,
    pub sdnn: f64,
    pub sdsd: Option<f64>,
    pub rmssd: f64,
    pub pnn20: f64,
    pub pnn50: f64,
    pub mad: f64,
    pub sd1: Option<f64>,
    pub sd2: Option<f64>,
    pub s_area: Option<f64>,
    pub sd1_sd2_ratio: Option<f64>,
    /// Breaths per minute.
    pub br: Option<f64>,
}

pub const FEATURE_NAMES: [&str; 13] = [
    "bpm", "ibi", "sdnn", "sdsd", "rmssd", "pnn20", "pnn50", "mad", "sd1", "sd2", "s", "sd1_sd2",
    "br",
];

impl HrvFeatures {
    /// Model input order; the first 12 are the default inputs, `br` is the
    /// optional 13th. Missing values come back as NaN.
    pub fn to_vec(&self, include_br: bool) -> Vec<f64> {
        let nan = f64::NAN;
        let mut v = vec![
            self.bpm,
            self.ibi_mean,
            self.sdnn,
            self.sdsd.unwrap_or(nan),
            self.rmssd,
            self.pnn20,
            self.pnn50,
            self.mad,
            self.sd1.unwrap_or(nan),
            self.sd2.unwrap_or(nan),
            self.s_area.unwrap_or(nan),
            self.sd1_sd2_ratio.unwrap_or(nan),
        ];
        if include_br {
            v.push(self.br.unwrap_or(nan));
        }
        v
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn pop_std(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

fn median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn extract_features(ibi: &IbiSeries) -> HrvFeatures {
    let x = ibi.intervals();
    let ibi_mean = mean(x);
    let sdnn = pop_std(x);
    let diffs: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let rmssd = (diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64).sqrt();
    let frac_above =
        |thr: f64| diffs.iter().filter(|d| d.abs() > thr).count() as f64 / diffs.len() as f64;
    let med = median(x);
    let mad = median(&x.iter().map(|v| (v - med).abs()).collect::<Vec<_>>());

    // spread of successive differences needs at least two of them
    let sdsd = (diffs.len() >= 2).then(|| pop_std(&diffs));
    let sd1 = sdsd.map(|s| s / SQRT_2);
    let sd2 = sdsd.map(|s| (2.0 * sdnn * sdnn - s * s / 2.0).max(0.0).sqrt());
    let s_area = sd1.zip(sd2).map(|(a, b)| PI * a * b);
    let sd1_sd2_ratio = sd1.zip(sd2).and_then(|(a, b)| (b > 0.0).then(|| a / b));

    HrvFeatures {
        bpm: 60_000.0 / ibi_mean,
        ibi_mean,
        sdnn,
        sdsd,
        rmssd,
        pnn20: frac_above(20.0),
        pnn50: frac_above(50.0),
        mad,
        sd1,
        sd2,
        s_area,
        sd1_sd2_ratio,
        br: breathing_rate(x),
    }
}

const RESAMPLE_HZ: f64 = 4.0;
const BR_BAND_HZ: (f64, f64) = (0.1, 0.4);
const BR_MIN_SPAN_S: f64 = 1.0 / BR_BAND_HZ.0;

/// Dominant respiratory-band frequency of the tachogram, in breaths/min.
///
/// The IBI series is placed at its beat times, resampled at 4 Hz with a
/// natural cubic spline, mean-removed and analysed with a Hann-windowed
/// Welch periodogram restricted to 0.1–0.4 Hz.
pub fn breathing_rate(intervals_ms: &[f64]) -> Option<f64> {
    if intervals_ms.len() < 4 {
        return None;
    }
    let mut t = Vec::with_capacity(intervals_ms.len());
    let mut acc = 0.0;
    for v in intervals_ms {
        acc += v / 1000.0;
        t.push(acc);
    }
    let span = t[t.len() - 1] - t[0];
    if span < BR_MIN_SPAN_S {
        return None;
    }
    let spline = NaturalSpline::fit(&t, intervals_ms)?;
    let n = (span * RESAMPLE_HZ).floor() as usize + 1;
    let mut y: Vec<f64> = (0..n)
        .map(|i| spline.eval(t[0] + i as f64 / RESAMPLE_HZ))
        .collect();
    let m = mean(&y);
    y.iter_mut().for_each(|v| *v -= m);

    let seg = n.min(256);
    let step = (seg / 2).max(1);
    let hann: Vec<f64> = (0..seg)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (seg.max(2) - 1) as f64).cos())
        .collect();
    let freqs: Vec<f64> = {
        let df = 0.0025;
        let k = ((BR_BAND_HZ.1 - BR_BAND_HZ.0) / df).round() as usize;
        (0..=k).map(|i| BR_BAND_HZ.0 + i as f64 * df).collect()
    };
    let mut power = vec![0.0; freqs.len()];
    let mut start = 0;
    while start + seg <= n {
        let chunk = &y[start..start + seg];
        let cm = mean(chunk);
        for (p, &f) in power.iter_mut().zip(&freqs) {
            let w = 2.0 * PI * f / RESAMPLE_HZ;
            let (mut re, mut im) = (0.0, 0.0);
            for (i, (&v, &h)) in chunk.iter().zip(&hann).enumerate() {
                let a = (v - cm) * h;
                re += a * (w * i as f64).cos();
                im -= a * (w * i as f64).sin();
            }
            *p += re * re + im * im;
        }
        start += step;
    }
    let (best, &peak) = power.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    (peak > 0.0).then(|| freqs[best] * 60.0)
}

struct NaturalSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl NaturalSpline {
    fn fit(x: &[f64], y: &[f64]) -> Option<Self> {
        let n = x.len();
        if n < 3 || x.windows(2).any(|w| w[1] <= w[0]) {
            return None;
        }
        // tridiagonal system for interior second derivatives (Thomas algorithm)
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let k = n - 2;
        let mut diag = vec![0.0; k];
        let mut upper = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        for i in 0..k {
            diag[i] = 2.0 * (h[i] + h[i + 1]);
            upper[i] = h[i + 1];
            rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h[i + 1] - (y[i + 1] - y[i]) / h[i]);
        }
        for i in 1..k {
            let w = h[i] / diag[i - 1];
            diag[i] -= w * upper[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        let mut m = vec![0.0; n];
        for i in (0..k).rev() {
            let next = if i + 1 < k { m[i + 2] } else { 0.0 };
            m[i + 1] = (rhs[i] - upper[i] * next) / diag[i];
        }
        Some(Self {
            x: x.to_vec(),
            y: y.to_vec(),
            m,
        })
    }

    fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let i = match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}
