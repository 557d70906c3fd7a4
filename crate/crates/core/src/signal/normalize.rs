use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Per-feature min/max fitted on the pre-training split and reused verbatim
/// for every later phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationBounds {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl NormalizationBounds {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        ensure!(
            !rows.is_empty(),
            InsufficientData,
            "cannot fit normalization bounds on no rows"
        );
        let width = rows[0].len();
        let mut mins = vec![f64::INFINITY; width];
        let mut maxs = vec![f64::NEG_INFINITY; width];
        for (i, r) in rows.iter().enumerate() {
            ensure!(
                r.len() == width,
                Contract,
                "row {i} has {} features, expected {width}",
                r.len()
            );
            for (j, &v) in r.iter().enumerate() {
                mins[j] = mins[j].min(v);
                maxs[j] = maxs[j].max(v);
            }
        }
        Ok(Self { mins, maxs })
    }

    pub fn width(&self) -> usize {
        self.mins.len()
    }

    /// `(x − min)/(max − min)` clamped to [0, 1]; constant features map to 0.5.
    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        ensure!(
            row.len() == self.width(),
            Contract,
            "row has {} features, bounds cover {}",
            row.len(),
            self.width()
        );
        Ok(row
            .iter()
            .zip(self.mins.iter().zip(&self.maxs))
            .map(|(&v, (&lo, &hi))| {
                let range = hi - lo;
                if range > 0.0 {
                    ((v - lo) / range).clamp(0.0, 1.0)
                } else {
                    0.5
                }
            })
            .collect())
    }

    pub fn apply(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.apply_row(r)).collect()
    }
}

/// Normalizes `rows` with the given bounds, or with bounds fitted on `rows`
/// themselves when none are supplied (only valid for a training split).
pub fn min_max_normalize(
    rows: &[Vec<f64>],
    bounds: Option<&NormalizationBounds>,
) -> Result<(Vec<Vec<f64>>, NormalizationBounds)> {
    let bounds = match bounds {
        Some(b) => b.clone(),
        None => NormalizationBounds::fit(rows)?,
    };
    Ok((bounds.apply(rows)?, bounds))
}
