use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{CohortSpec, LabelScheme, DEFAULT_TEST_FRACTION};
use crate::dp::{Epsilon, PrivacyConfig};
use crate::error::{ensure, Error, Result};
use crate::eval::DEFAULT_THRESHOLD;
use crate::nn::{DEFAULT_DIMS, DEFAULT_LEARNING_RATE};
use crate::signal::ExtractionConfig;

/// Current config schema version. Files declaring another version are
/// rejected.
pub const CONFIG_VERSION: u32 = 1;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Random init, trained on the fine-tune training splits only.
    Plain,
    /// Pre-training only, evaluated zero-shot.
    Pretrained,
    /// Pre-training followed by private federated fine-tuning.
    Finetuned,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Plain => "plain",
            Mode::Pretrained => "pretrained",
            Mode::Finetuned => "finetuned",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Mode::Plain),
            "pretrained" => Ok(Mode::Pretrained),
            "finetuned" => Ok(Mode::Finetuned),
            other => Err(Error::Config(format!(
                "unknown mode {other:?}; expected plain, pretrained or finetuned"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub dims: Vec<usize>,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dims: DEFAULT_DIMS.to_vec(),
            dropout: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            lr: DEFAULT_LEARNING_RATE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Weight client deltas by training-sample count instead of 1/K.
    pub weighted: bool,
    /// Reset each client's Adam state at the start of every round.
    pub reset_adam: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            rounds: 30,
            local_epochs: 1,
            batch_size: 32,
            lr: DEFAULT_LEARNING_RATE,
            weighted: false,
            reset_adam: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlainConfig {
    /// Centralized epochs; `None` means `rounds × local_epochs` of the
    /// fine-tune phase, so both see the same number of passes.
    pub epochs: Option<usize>,
    /// Train the plain baseline with federated rounds instead.
    pub federated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Budgets to fine-tune with; `"off"` is federated without privacy.
    pub epsilons: Vec<Epsilon>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![Epsilon::Finite(0.5), Epsilon::Finite(1.0), Epsilon::Off],
        }
    }
}

/// Where a dataset comes from: a feature CSV or a synthetic cohort. When a
/// cohort is generated inside an experiment its `seed` is replaced by the
/// experiment seed, so both cohorts of one run share a base direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cohort: Option<CohortSpec>,
}

impl DataSource {
    pub fn csv(path: impl Into<PathBuf>) -> Self {
        Self {
            path: Some(path.into()),
            cohort: None,
        }
    }

    pub fn cohort(spec: CohortSpec) -> Self {
        Self {
            path: None,
            cohort: Some(spec),
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        ensure!(
            self.path.is_some() != self.cohort.is_some(),
            Config,
            "data.{name} must set exactly one of `path` or `cohort`"
        );
        if let Some(c) = &self.cohort {
            c.validate()
                .map_err(|e| Error::Config(format!("data.{name}.cohort: {e}")))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub pretrain: DataSource,
    pub finetune: DataSource,
    pub test_fraction: f64,
    pub labels: LabelScheme,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            pretrain: DataSource::cohort(CohortSpec::pretrain_default()),
            finetune: DataSource::cohort(CohortSpec::finetune_default()),
            test_fraction: DEFAULT_TEST_FRACTION,
            labels: LabelScheme::default(),
        }
    }
}

/// A complete experiment description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub version: u32,
    pub mode: Mode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Decision threshold for the threshold metrics.
    pub threshold: f64,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub plain: PlainConfig,
    pub privacy: PrivacyConfig,
    pub sweep: SweepConfig,
    pub data: DataConfig,
    pub extraction: ExtractionConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            mode: Mode::Finetuned,
            seed: None,
            threshold: DEFAULT_THRESHOLD,
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            plain: PlainConfig::default(),
            privacy: PrivacyConfig::default(),
            sweep: SweepConfig::default(),
            data: DataConfig::default(),
            extraction: ExtractionConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn plain_epochs(&self) -> usize {
        self.plain
            .epochs
            .unwrap_or(self.finetune.rounds * self.finetune.local_epochs)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.version == CONFIG_VERSION,
            Config,
            "version: unsupported config version {} (expected {CONFIG_VERSION})",
            self.version
        );
        let dims = &self.model.dims;
        ensure!(
            dims.len() >= 2 && dims.iter().all(|&d| d > 0) && dims.last() == Some(&1),
            Config,
            "model.dims must list at least two positive widths ending in 1, got {dims:?}"
        );
        ensure!(
            (0.0..1.0).contains(&self.model.dropout),
            Config,
            "model.dropout must lie in [0, 1), got {}",
            self.model.dropout
        );
        ensure!(
            self.pretrain.epochs >= 1,
            Config,
            "pretrain.epochs must be positive"
        );
        ensure!(
            self.pretrain.batch_size >= 1,
            Config,
            "pretrain.batch_size must be positive"
        );
        ensure!(
            self.finetune.local_epochs >= 1,
            Config,
            "finetune.local_epochs must be positive"
        );
        ensure!(
            self.finetune.batch_size >= 1,
            Config,
            "finetune.batch_size must be positive"
        );
        ensure!(
            self.plain.epochs != Some(0),
            Config,
            "plain.epochs must be positive"
        );
        for (key, lr) in [
            ("pretrain.lr", self.pretrain.lr),
            ("finetune.lr", self.finetune.lr),
        ] {
            ensure!(
                lr >= 0.0 && lr.is_finite(),
                Config,
                "{key} must be non-negative, got {lr}"
            );
        }
        ensure!(
            self.threshold.is_finite() && (0.0..=1.0).contains(&self.threshold),
            Config,
            "threshold must lie in [0, 1], got {}",
            self.threshold
        );
        ensure!(
            self.data.test_fraction > 0.0 && self.data.test_fraction < 1.0,
            Config,
            "data.test_fraction must lie in (0, 1), got {}",
            self.data.test_fraction
        );
        self.privacy
            .validate()
            .map_err(|e| Error::Config(format!("privacy: {e}")))?;
        ensure!(
            !self.sweep.epsilons.is_empty(),
            Config,
            "sweep.epsilons must not be empty"
        );
        self.data.pretrain.validate("pretrain")?;
        self.data.finetune.validate("finetune")?;
        Ok(())
    }

    pub fn from_toml(text: &str, source: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("{source}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        // relative data paths are resolved against the config's directory
        let base = path.parent().unwrap_or(Path::new(""));
        for src in [&mut cfg.data.pretrain, &mut cfg.data.finetune] {
            if let Some(p) = &src.path {
                if p.is_relative() {
                    src.path = Some(base.join(p));
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Contract(format!("config serialization: {e}")))
    }
}
