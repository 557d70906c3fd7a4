//! Labelled feature datasets, label binarization, chronological splits and
//! per-user client partitioning.

mod cohort;
mod csv_io;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use cohort::{generate_cohort, CohortRole, CohortSpec};
pub use csv_io::{format_feature_csv, read_feature_csv, write_feature_csv, FEATURE_CSV_VERSION};

use crate::error::{ensure, Error, Result};
use crate::nn::Example;

pub const DEFAULT_TEST_FRACTION: f64 = 0.3;

/// One EMA-aligned observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub user_id: String,
    pub timestamp_ms: i64,
    pub features: Vec<f64>,
    /// Raw self-reported stress level (0–4 on the default scale).
    pub stress_level: i64,
}

/// Samples with a uniform feature width.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        if let Some(first) = samples.first() {
            let width = first.features.len();
            for (i, s) in samples.iter().enumerate() {
                ensure!(
                    s.features.len() == width,
                    Data,
                    "sample {i} (user {}) has {} features, expected {width}",
                    s.user_id,
                    s.features.len()
                );
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_width(&self) -> Option<usize> {
        self.samples.first().map(|s| s.features.len())
    }
}

/// Maps raw EMA stress levels to binary labels: levels at or below the
/// threshold are unstressed (0), higher levels stressed (1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelScheme {
    pub threshold: i64,
    pub min_level: i64,
    pub max_level: i64,
}

impl Default for LabelScheme {
    fn default() -> Self {
        Self {
            threshold: 2,
            min_level: 0,
            max_level: 4,
        }
    }
}

impl LabelScheme {
    pub fn binarize(&self, level: i64) -> Result<u8> {
        ensure!(
            (self.min_level..=self.max_level).contains(&level),
            Data,
            "stress level {level} outside recorded scale {}..={}",
            self.min_level,
            self.max_level
        );
        Ok(u8::from(level > self.threshold))
    }

    /// Converts samples to training examples, naming the offending row on
    /// failure.
    pub fn examples(&self, samples: &[Sample]) -> Result<Vec<Example>> {
        samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let label = self.binarize(s.stress_level).map_err(|e| {
                    Error::Data(format!(
                        "row {i} (user {}, t={}): {e}",
                        s.user_id, s.timestamp_ms
                    ))
                })?;
                Ok(Example::new(s.features.clone(), label))
            })
            .collect()
    }
}

pub fn binarize_label(stress_level: i64) -> Result<u8> {
    LabelScheme::default().binarize(stress_level)
}

/// One user's chronologically split data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub user_id: String,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl ClientShard {
    pub fn is_empty(&self) -> bool {
        self.train.is_empty() && self.test.is_empty()
    }
}

/// Number of samples assigned to the test side: `ceil(fraction · n)`.
pub fn test_count(n: usize, test_fraction: f64) -> usize {
    // the small offset keeps products like 0.3 * 10 from rounding up to 4
    let k = (test_fraction * n as f64 - 1e-9).ceil().max(0.0) as usize;
    k.min(n)
}

/// Stable-sorts by timestamp and sends the last `ceil(fraction · n)` samples
/// to the test side.
pub fn chronological_split(
    mut samples: Vec<Sample>,
    test_fraction: f64,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    ensure!(
        (0.0..=1.0).contains(&test_fraction),
        Config,
        "test fraction must lie in [0, 1], got {test_fraction}"
    );
    samples.sort_by_key(|s| s.timestamp_ms);
    let n_test = test_count(samples.len(), test_fraction);
    let test = samples.split_off(samples.len() - n_test);
    Ok((samples, test))
}

/// One shard per distinct user, ordered by user id.
pub fn partition_clients(dataset: &Dataset, test_fraction: f64) -> Result<Vec<ClientShard>> {
    let mut by_user: BTreeMap<&str, Vec<Sample>> = BTreeMap::new();
    for s in dataset.samples() {
        by_user.entry(&s.user_id).or_default().push(s.clone());
    }
    by_user
        .into_iter()
        .map(|(user, samples)| {
            let (train, test) = chronological_split(samples, test_fraction)?;
            Ok(ClientShard {
                user_id: user.to_owned(),
                train,
                test,
            })
        })
        .collect()
}
