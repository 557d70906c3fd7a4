//! PPG preprocessing: band-pass filtering, smoothing, beat detection,
//! inter-beat intervals, HRV features and min-max normalization.

mod filter;
mod hrv;
mod ingest;
mod normalize;
mod peaks;

pub use filter::{butterworth_bandpass, design_bandpass, Biquad, FilterSpec, SosFilter};
pub use hrv::{
    breathing_rate, extract_features, to_ibi, HrvFeatures, IbiSeries, FEATURE_NAMES, IBI_MAX_MS,
    IBI_MIN_MS,
};
pub use ingest::{
    extract_dataset, parse_raw_csv, read_ema_csv, read_raw_csv, window_features, EmaPrompt,
    ExtractionConfig, RawRecording,
};
pub use normalize::{min_max_normalize, NormalizationBounds};
pub use peaks::{detect_peaks, moving_average, PeakConfig};

use crate::error::{ensure, Result};

/// A uniformly sampled PPG trace.
#[derive(Debug, Clone, PartialEq)]
pub struct PpgSignal {
    pub samples: Vec<f64>,
    pub sample_rate_hz: f64,
}

impl PpgSignal {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        ensure!(
            sample_rate_hz.is_finite() && sample_rate_hz > 0.0,
            Config,
            "sample rate must be positive, got {sample_rate_hz}"
        );
        ensure!(
            samples.iter().all(|v| v.is_finite()),
            Data,
            "signal contains non-finite samples"
        );
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }
}
