use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Mode};
use crate::error::{ensure, Error, Result};
use crate::eval::{EvalReport, RocCurve};
use crate::fed::{write_round_log, RoundRecord};
use crate::nn::{read_u32, read_u64, MlpModel, ParameterSet};
use crate::signal::NormalizationBounds;

const CKPT_MAGIC: &[u8; 4] = b"FSCK";
const CKPT_VERSION: u32 = 1;

pub const CONFIG_FILE: &str = "config.snapshot";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const ROUNDS_FILE: &str = "rounds.log";
pub const METRICS_FILE: &str = "metrics.json";
pub const REPORT_FILE: &str = "report.txt";
pub const ROC_FILE: &str = "roc.csv";

fn rd<T>(r: std::io::Result<T>) -> Result<T> {
    r.map_err(|_| Error::Data("checkpoint is truncated".into()))
}

/// A trained model together with the normalization bounds its inputs need.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MlpModel,
    pub bounds: NormalizationBounds,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(CKPT_MAGIC)?;
        w.write_all(&CKPT_VERSION.to_le_bytes())?;
        let dims = self.model.dims();
        w.write_all(&(dims.len() as u64).to_le_bytes())?;
        for &d in dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&self.model.dropout_rate().to_bits().to_le_bytes())?;
        w.write_all(&(self.bounds.width() as u64).to_le_bytes())?;
        for v in self.bounds.mins.iter().chain(&self.bounds.maxs) {
            w.write_all(&v.to_bits().to_le_bytes())?;
        }
        self.model.params().write_to(w)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Data("checkpoint is truncated".into()))?;
        ensure!(
            &magic == CKPT_MAGIC,
            Data,
            "not a model checkpoint (bad magic)"
        );
        let version = rd(read_u32(r))?;
        ensure!(
            version == CKPT_VERSION,
            Data,
            "unsupported checkpoint version {version}"
        );
        let n_dims = rd(read_u64(r))? as usize;
        ensure!(
            (2..=64).contains(&n_dims),
            Data,
            "checkpoint declares {n_dims} layers"
        );
        let dims = (0..n_dims)
            .map(|_| rd(read_u64(r)).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let dropout = f64::from_bits(rd(read_u64(r))?);
        let width = rd(read_u64(r))? as usize;
        ensure!(
            width == dims[0],
            Data,
            "checkpoint bounds width {width} does not match input {}",
            dims[0]
        );
        let mut vals = (0..2 * width)
            .map(|_| rd(read_u64(r)).map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        let maxs = vals.split_off(width);
        let params = ParameterSet::read_from(r)?;
        let model = MlpModel::from_params(&dims, dropout, params)
            .map_err(|e| Error::Data(format!("checkpoint: {e}")))?;
        Ok(Self {
            model,
            bounds: NormalizationBounds { mins: vals, maxs },
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut bytes.as_slice())
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }
}

/// Writes to a sibling temp file and renames it into place, so readers never
/// see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_owned(),
    });
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// The deterministic part of a run's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: Mode,
    pub seed: u64,
    pub epsilon: String,
    pub n_train: usize,
    pub n_test: usize,
    pub eval: EvalReport,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Plain-text table with the four threshold metrics.
    pub fn to_table(&self) -> String {
        let m = &self.eval.metrics;
        let mut s = format!(
            "mode        accuracy  f1        recall    precision auc\n{:<11} {:<9.4} {:<9.4} {:<9.4} {:<9.4} {}\n",
            self.mode.to_string(),
            m.accuracy,
            m.f1,
            m.recall,
            m.precision,
            self.eval.auc.map_or("n/a".to_owned(), |a| format!("{a:.4}"))
        );
        if !m.undefined.is_empty() {
            s.push_str(&format!(
                "undefined (reported as 0): {}\n",
                m.undefined.join(", ")
            ));
        }
        s
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct TrainedArtifact {
    pub checkpoint: Checkpoint,
    pub rounds: Vec<RoundRecord>,
    /// Resolved configuration (seed filled in).
    pub config: ExperimentConfig,
    pub report: MetricsReport,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl TrainedArtifact {
    pub fn roc(&self) -> Option<RocCurve> {
        crate::eval::roc(&self.scores, &self.labels).ok()
    }

    /// Writes the artifact directory. Each file is replaced atomically.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let mut put = |name: &str, bytes: &[u8]| -> Result<()> {
            let p = dir.join(name);
            write_atomic(&p, bytes)?;
            written.push(p);
            Ok(())
        };
        put(CONFIG_FILE, self.config.to_toml()?.as_bytes())?;
        put(CHECKPOINT_FILE, &self.checkpoint.to_bytes())?;
        let mut log = Vec::new();
        write_round_log(&self.rounds, &mut log)?;
        put(ROUNDS_FILE, &log)?;
        put(METRICS_FILE, self.report.to_json().as_bytes())?;
        put(REPORT_FILE, self.report.to_table().as_bytes())?;
        if let Some(r) = self.roc() {
            put(ROC_FILE, r.to_csv().as_bytes())?;
        }
        Ok(written)
    }
}
