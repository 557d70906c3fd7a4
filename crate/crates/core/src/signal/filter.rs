//! Butterworth band-pass design (bilinear transform with pre-warping) and
//! zero-phase application as a cascade of second-order sections.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::PpgSignal;
use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSpec {
    pub low_cut_hz: f64,
    pub high_cut_hz: f64,
    /// Prototype order; the band-pass has `order` second-order sections.
    pub order: usize,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            low_cut_hz: 0.5,
            high_cut_hz: 8.0,
            order: 2,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        ensure!(self.order >= 1, Config, "filter order must be at least 1");
        ensure!(
            self.low_cut_hz > 0.0 && self.low_cut_hz < self.high_cut_hz,
            Config,
            "filter cutoffs must satisfy 0 < low ({}) < high ({})",
            self.low_cut_hz,
            self.high_cut_hz
        );
        ensure!(
            self.high_cut_hz < sample_rate_hz / 2.0,
            Config,
            "high cutoff {} Hz must be below Nyquist ({} Hz)",
            self.high_cut_hz,
            sample_rate_hz / 2.0
        );
        Ok(())
    }

    /// Minimum signal length the zero-phase filter accepts.
    pub fn warmup_len(&self) -> usize {
        3 * self.order
    }
}

/// Second-order section `b0 + b1 z⁻¹ + b2 z⁻² / 1 + a1 z⁻¹ + a2 z⁻²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Transposed direct-form II state for a constant unit input.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[1] * g;
        let z1 = self.b[1] - self.a[0] * g + z2;
        [z1, z2]
    }

    pub fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        (self.b[0] + self.b[1] * z1 + self.b[2] * z2) / (1.0 + self.a[0] * z1 + self.a[1] * z2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
}

impl SosFilter {
    /// Magnitude response at `freq_hz`.
    pub fn gain_at(&self, freq_hz: f64, sample_rate_hz: f64) -> f64 {
        let omega = 2.0 * PI * freq_hz / sample_rate_hz;
        self.sections
            .iter()
            .map(|s| s.response(omega))
            .fold(Complex64::new(1.0, 0.0), |acc, h| acc * h)
            .norm()
    }

    /// Single causal pass. `initial` scales the steady-state response to a
    /// constant input, as in `sosfilt_zi`.
    fn run(&self, x: &mut [f64], initial: f64) {
        let mut dc = 1.0;
        for s in &self.sections {
            let [mut z1, mut z2] = s.step_state().map(|v| v * initial * dc);
            for v in x.iter_mut() {
                let input = *v;
                let y = s.b[0] * input + z1;
                z1 = s.b[1] * input - s.a[0] * y + z2;
                z2 = s.b[2] * input - s.a[1] * y;
                *v = y;
            }
            dc *= s.dc_gain();
        }
    }

    /// Forward-backward application with odd-extension padding.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let first = ext[0];
        self.run(&mut ext, first);
        ext.reverse();
        let first = ext[0];
        self.run(&mut ext, first);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Designs a digital Butterworth band-pass of the given prototype order.
pub fn design_bandpass(spec: &FilterSpec, sample_rate_hz: f64) -> Result<SosFilter> {
    spec.validate(sample_rate_hz)?;
    let fs2 = 2.0 * sample_rate_hz;
    let warp = |f: f64| fs2 * (PI * f / sample_rate_hz).tan();
    let (w1, w2) = (warp(spec.low_cut_hz), warp(spec.high_cut_hz));
    let bw = w2 - w1;
    let w0 = (w1 * w2).sqrt();
    let n = spec.order;

    // analog low-pass prototype poles, then low-pass -> band-pass
    let mut poles = Vec::with_capacity(2 * n);
    for k in 0..n {
        let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
        let p = Complex64::from_polar(1.0, theta) * bw;
        let disc = (p * p - 4.0 * w0 * w0).sqrt();
        poles.push((p + disc) / 2.0);
        poles.push((p - disc) / 2.0);
    }
    let digital: Vec<Complex64> = poles.iter().map(|&s| (fs2 + s) / (fs2 - s)).collect();

    let mut upper: Vec<Complex64> = digital.iter().copied().filter(|p| p.im > 1e-12).collect();
    let mut real: Vec<f64> = digital
        .iter()
        .filter(|p| p.im.abs() <= 1e-12)
        .map(|p| p.re)
        .collect();
    upper.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    real.sort_by(f64::total_cmp);

    let mut sections: Vec<Biquad> = upper
        .iter()
        .map(|p| Biquad {
            b: [1.0, 0.0, -1.0],
            a: [-2.0 * p.re, p.norm_sqr()],
        })
        .collect();
    for pair in real.chunks(2) {
        let (r1, r2) = (pair[0], *pair.get(1).unwrap_or(&0.0));
        sections.push(Biquad {
            b: [1.0, 0.0, -1.0],
            a: [-(r1 + r2), r1 * r2],
        });
    }

    // unit gain at the digital image of the analog centre frequency
    let mut filter = SosFilter { sections };
    let centre_hz = sample_rate_hz / PI * (w0 / fs2).atan();
    let g = filter.gain_at(centre_hz, sample_rate_hz);
    for v in &mut filter.sections[0].b {
        *v /= g;
    }
    Ok(filter)
}

/// Zero-phase Butterworth band-pass. Output length equals input length.
pub fn butterworth_bandpass(signal: &PpgSignal, spec: &FilterSpec) -> Result<PpgSignal> {
    let filter = design_bandpass(spec, signal.sample_rate_hz)?;
    ensure!(
        signal.samples.len() >= spec.warmup_len(),
        InsufficientData,
        "signal of {} samples is shorter than the filter warm-up ({})",
        signal.samples.len(),
        spec.warmup_len()
    );
    Ok(PpgSignal {
        samples: filter.filtfilt(&signal.samples),
        sample_rate_hz: signal.sample_rate_hz,
    })
}
