//! Confusion counts, threshold metrics and ROC analysis.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    ensure!(
        scores.len() == labels.len(),
        Contract,
        "{} scores but {} labels",
        scores.len(),
        labels.len()
    );
    ensure!(
        labels.iter().all(|&y| y <= 1),
        Data,
        "labels must be 0 or 1"
    );
    ensure!(
        scores.iter().all(|s| !s.is_nan()),
        Data,
        "scores contain NaN"
    );
    Ok(())
}

/// Counts with the rule `score >= threshold` predicts positive.
pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    check_inputs(scores, labels)?;
    let mut c = ConfusionCounts::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Threshold metrics. A ratio with a zero denominator is reported as 0 and
/// flagged in `undefined`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub undefined: Vec<String>,
}

pub fn metrics(c: &ConfusionCounts) -> Result<Metrics> {
    ensure!(
        c.total() > 0,
        InsufficientData,
        "metrics of an empty confusion matrix"
    );
    let mut undefined = Vec::new();
    let mut ratio = |name: &str, num: usize, den: usize| {
        if den == 0 {
            undefined.push(name.to_owned());
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let accuracy = (c.tp + c.tn) as f64 / c.total() as f64;
    let precision = ratio("precision", c.tp, c.tp + c.fp);
    let recall = ratio("recall", c.tp, c.tp + c.fn_);
    let f1 = ratio("f1", 2 * c.tp, 2 * c.tp + c.fp + c.fn_);
    Ok(Metrics {
        accuracy,
        precision,
        recall,
        f1,
        undefined,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve from `(0, 0)` to `(1, 1)`; tied scores form a single step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
        }
        out
    }
}

pub fn roc(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    check_inputs(scores, labels)?;
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    ensure!(
        pos > 0 && neg > 0,
        InsufficientData,
        "ROC needs both classes, got {pos} positive and {neg} negative"
    );
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        auc += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
        points.push(RocPoint {
            threshold: s,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(RocCurve {
        points,
        auc: auc / (pos as f64 * neg as f64),
    })
}

pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    roc(scores, labels).map(|r| r.auc)
}

/// Everything reported for one scored test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub threshold: f64,
    pub confusion: ConfusionCounts,
    pub metrics: Metrics,
    pub auc: Option<f64>,
}

pub fn evaluate(scores: &[f64], labels: &[u8], threshold: f64) -> Result<EvalReport> {
    let confusion = confusion(scores, labels, threshold)?;
    let metrics = metrics(&confusion)?;
    let auc = match roc(scores, labels) {
        Ok(r) => Some(r.auc),
        Err(crate::Error::InsufficientData(msg)) => {
            log::warn!("AUC undefined: {msg}");
            None
        }
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        n: scores.len(),
        threshold,
        confusion,
        metrics,
        auc,
    })
}
