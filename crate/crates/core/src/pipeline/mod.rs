//! Experiment orchestration: pre-training, private federated fine-tuning,
//! the plain and pre-trained baselines, and the ε sweep.
//!
//! Every random choice is drawn from a stream derived from the experiment
//! seed and a fixed tag, so a `(config, seed)` pair fully determines a run.

mod artifact;
mod config;

use std::sync::Arc;

pub use artifact::{
    write_atomic, Checkpoint, MetricsReport, TrainedArtifact, CHECKPOINT_FILE, CONFIG_FILE,
    METRICS_FILE, REPORT_FILE, ROC_FILE, ROUNDS_FILE,
};
pub use config::{
    DataConfig, DataSource, ExperimentConfig, FinetuneConfig, Mode, ModelConfig, PlainConfig,
    PretrainConfig, SweepConfig, CONFIG_VERSION, DEFAULT_SEED,
};

use serde::{Deserialize, Serialize};

use crate::data::{
    generate_cohort, partition_clients, read_feature_csv, ClientShard, CohortRole, Dataset,
    LabelScheme, Sample,
};
use crate::dp::{Epsilon, PrivacyConfig};
use crate::error::{ensure, Error, Result};
use crate::eval::{evaluate, roc, EvalReport, RocCurve};
use crate::fed::{
    run_round, ClientState, GlobalModel, LocalTrainConfig, RoundConfig, RoundEval, RoundRecord,
};
use crate::nn::{train_epoch, Example, MlpModel, Optimizer, OptimizerKind};
use crate::rng::{stream, tag};
use crate::signal::NormalizationBounds;

fn load_source(src: &DataSource, role: CohortRole, seed: u64) -> Result<Dataset> {
    match (&src.path, &src.cohort) {
        (Some(p), None) => read_feature_csv(p),
        (None, Some(spec)) => {
            let spec = crate::data::CohortSpec {
                seed,
                ..spec.clone()
            };
            generate_cohort(&spec, role)
        }
        _ => Err(Error::Config(
            "data source must set exactly one of path or cohort".into(),
        )),
    }
}

/// The pre-training corpus for `seed`.
pub fn load_pretrain(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    load_source(&cfg.data.pretrain, CohortRole::Pretrain, seed)
}

/// Fine-tune clients, one per user, each split chronologically.
pub fn load_clients(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<ClientShard>> {
    let ds = load_source(&cfg.data.finetune, CohortRole::Finetune, seed)?;
    ensure!(
        !ds.is_empty(),
        InsufficientData,
        "fine-tune dataset is empty"
    );
    partition_clients(&ds, cfg.data.test_fraction)
}

/// Union of the clients' test splits, in client order.
pub fn test_union(shards: &[ClientShard]) -> Vec<Sample> {
    shards.iter().flat_map(|s| s.test.iter().cloned()).collect()
}

fn train_union(shards: &[ClientShard]) -> Vec<Sample> {
    shards
        .iter()
        .flat_map(|s| s.train.iter().cloned())
        .collect()
}

fn check_width(samples: &[Sample], cfg: &ExperimentConfig, what: &str) -> Result<()> {
    if let Some(s) = samples.first() {
        ensure!(
            s.features.len() == cfg.model.dims[0],
            Config,
            "{what} has {} features but model.dims starts with {}",
            s.features.len(),
            cfg.model.dims[0]
        );
    }
    Ok(())
}

/// Normalized, binarized examples.
pub fn prepare_examples(
    samples: &[Sample],
    bounds: &NormalizationBounds,
    labels: &LabelScheme,
) -> Result<Vec<Example>> {
    let mut ex = labels.examples(samples)?;
    for e in &mut ex {
        e.features = bounds.apply_row(&e.features)?;
    }
    Ok(ex)
}

fn fit_bounds(samples: &[Sample]) -> Result<NormalizationBounds> {
    let rows: Vec<Vec<f64>> = samples.iter().map(|s| s.features.clone()).collect();
    NormalizationBounds::fit(&rows)
}

/// Centralized minibatch Adam on `data`; returns the mean loss per epoch.
fn train_centralized(
    model: &mut MlpModel,
    data: &[Example],
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
    stream_tag: &str,
) -> Result<Vec<f64>> {
    let mut opt = Optimizer::new(
        OptimizerKind::Adam { lr },
        Arc::clone(model.params().layout()),
    );
    let mut rng = stream(seed, &[tag(stream_tag)]);
    (0..epochs)
        .map(|_| train_epoch(model, &mut opt, data, batch_size, &mut rng))
        .collect()
}

/// Output of the pre-training phase.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub model: MlpModel,
    pub bounds: NormalizationBounds,
    pub epoch_losses: Vec<f64>,
}

/// Centralized training on the whole pre-training corpus, normalized with
/// bounds fitted on that corpus.
pub fn pretrain(cfg: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<Pretrained> {
    ensure!(!dataset.is_empty(), Config, "pre-training dataset is empty");
    check_width(dataset.samples(), cfg, "pre-training data")?;
    let bounds = fit_bounds(dataset.samples())?;
    let data = prepare_examples(dataset.samples(), &bounds, &cfg.data.labels)?;
    let mut model = MlpModel::new(
        &cfg.model.dims,
        cfg.model.dropout,
        &mut stream(seed, &[tag("init"), tag("pretrain")]),
    )?;
    let epoch_losses = train_centralized(
        &mut model,
        &data,
        cfg.pretrain.epochs,
        cfg.pretrain.batch_size,
        cfg.pretrain.lr,
        seed,
        "pretrain-epochs",
    )?;
    Ok(Pretrained {
        model,
        bounds,
        epoch_losses,
    })
}

/// A normalized held-out set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl EvalSet {
    pub fn new(
        samples: &[Sample],
        bounds: &NormalizationBounds,
        labels: &LabelScheme,
    ) -> Result<Self> {
        let ex = prepare_examples(samples, bounds, labels)?;
        Ok(Self {
            labels: ex.iter().map(|e| e.label).collect(),
            features: ex.into_iter().map(|e| e.features).collect(),
        })
    }

    pub fn scores(&self, model: &MlpModel) -> Result<Vec<f64>> {
        model.predict(&self.features)
    }

    pub fn evaluate(&self, model: &MlpModel, threshold: f64) -> Result<(EvalReport, Vec<f64>)> {
        let scores = self.scores(model)?;
        Ok((evaluate(&scores, &self.labels, threshold)?, scores))
    }
}

fn round_config(cfg: &ExperimentConfig) -> RoundConfig {
    RoundConfig {
        local: LocalTrainConfig {
            epochs: cfg.finetune.local_epochs,
            batch_size: cfg.finetune.batch_size,
            optimizer: OptimizerKind::Adam {
                lr: cfg.finetune.lr,
            },
            reset_optimizer: cfg.finetune.reset_adam,
        },
        weighted: cfg.finetune.weighted,
    }
}

/// Runs `cfg.finetune.rounds` federated rounds starting from `model`. The
/// given bounds are used as-is for every client. When `eval` is supplied the
/// global model is scored on it after every round.
pub fn finetune_federated(
    model: MlpModel,
    bounds: &NormalizationBounds,
    shards: &[ClientShard],
    cfg: &ExperimentConfig,
    privacy: Option<&PrivacyConfig>,
    seed: u64,
    eval: Option<&EvalSet>,
) -> Result<(MlpModel, Vec<RoundRecord>)> {
    if cfg.finetune.rounds == 0 {
        return Ok((model, Vec::new()));
    }
    ensure!(
        shards.iter().any(|s| !s.train.is_empty()),
        InsufficientData,
        "federated fine-tuning needs at least one client with training data"
    );
    let rc = round_config(cfg);
    let mut clients = shards
        .iter()
        .map(|s| {
            Ok(ClientState::new(
                s.user_id.clone(),
                prepare_examples(&s.train, bounds, &cfg.data.labels)?,
                &model,
                rc.local.optimizer,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut global = GlobalModel::new(model);
    let mut records = Vec::with_capacity(cfg.finetune.rounds);
    for r in 1..=cfg.finetune.rounds {
        let mut rec = run_round(&mut global, &mut clients, &rc, privacy, seed, r)?;
        if let Some(set) = eval {
            let (rep, _) = set.evaluate(global.model(), cfg.threshold)?;
            rec.eval = Some(RoundEval {
                accuracy: rep.metrics.accuracy,
                auc: rep.auc,
            });
        }
        log::info!(
            "round {r}: {} clients, train loss {:.4} -> {:.4}",
            rec.participants.len(),
            rec.pre_loss,
            rec.post_loss
        );
        records.push(rec);
    }
    Ok((global.into_model(), records))
}

fn epsilon_label(cfg: &ExperimentConfig, federated: bool) -> String {
    if !federated {
        "n/a".to_owned()
    } else if cfg.privacy.adds_noise() {
        cfg.privacy.epsilon.to_string()
    } else {
        "off".to_owned()
    }
}

/// Trains and evaluates the configured mode. All modes are scored on the
/// same union of fine-tune test splits.
pub fn run_mode(cfg: &ExperimentConfig) -> Result<TrainedArtifact> {
    cfg.validate()?;
    let seed = cfg.seed();
    let mut resolved = cfg.clone();
    resolved.seed = Some(seed);
    let shards = load_clients(cfg, seed)?;
    let test = test_union(&shards);
    let train = train_union(&shards);
    check_width(&test, cfg, "fine-tune data")?;

    let (model, bounds, rounds, n_train, federated) = match cfg.mode {
        Mode::Plain => {
            ensure!(
                !train.is_empty(),
                InsufficientData,
                "no fine-tune training samples"
            );
            let bounds = fit_bounds(&train)?;
            let mut model = MlpModel::new(
                &cfg.model.dims,
                cfg.model.dropout,
                &mut stream(seed, &[tag("init"), tag("plain")]),
            )?;
            if cfg.plain.federated {
                let set = EvalSet::new(&test, &bounds, &cfg.data.labels)?;
                let (m, rounds) = finetune_federated(
                    model,
                    &bounds,
                    &shards,
                    cfg,
                    Some(&cfg.privacy),
                    seed,
                    Some(&set),
                )?;
                (m, bounds, rounds, train.len(), true)
            } else {
                let data = prepare_examples(&train, &bounds, &cfg.data.labels)?;
                train_centralized(
                    &mut model,
                    &data,
                    cfg.plain_epochs(),
                    cfg.finetune.batch_size,
                    cfg.finetune.lr,
                    seed,
                    "plain-epochs",
                )?;
                (model, bounds, Vec::new(), train.len(), false)
            }
        }
        Mode::Pretrained => {
            let ds = load_pretrain(cfg, seed)?;
            let p = pretrain(cfg, &ds, seed)?;
            (p.model, p.bounds, Vec::new(), ds.len(), false)
        }
        Mode::Finetuned => {
            let ds = load_pretrain(cfg, seed)?;
            let p = pretrain(cfg, &ds, seed)?;
            let set = EvalSet::new(&test, &p.bounds, &cfg.data.labels)?;
            let (m, rounds) = finetune_federated(
                p.model,
                &p.bounds,
                &shards,
                cfg,
                Some(&cfg.privacy),
                seed,
                Some(&set),
            )?;
            (m, p.bounds, rounds, ds.len() + train.len(), true)
        }
    };

    let set = EvalSet::new(&test, &bounds, &cfg.data.labels)?;
    let (eval, scores) = set.evaluate(&model, cfg.threshold)?;
    Ok(TrainedArtifact {
        checkpoint: Checkpoint { model, bounds },
        rounds,
        report: MetricsReport {
            mode: cfg.mode,
            seed,
            epsilon: epsilon_label(cfg, federated),
            n_train,
            n_test: test.len(),
            eval,
        },
        config: resolved,
        scores,
        labels: set.labels,
    })
}

/// Scores a checkpoint on a labelled dataset, normalizing with the
/// checkpoint's own bounds.
pub fn evaluate_checkpoint(
    ck: &Checkpoint,
    dataset: &Dataset,
    labels: &LabelScheme,
    threshold: f64,
) -> Result<(EvalReport, Vec<f64>, Vec<u8>)> {
    ensure!(
        !dataset.is_empty(),
        InsufficientData,
        "evaluation dataset is empty"
    );
    ensure!(
        dataset.feature_width() == Some(ck.model.input_dim()),
        Data,
        "dataset has {:?} features, checkpoint expects {}",
        dataset.feature_width(),
        ck.model.input_dim()
    );
    let set = EvalSet::new(dataset.samples(), &ck.bounds, labels)?;
    let (rep, scores) = set.evaluate(&ck.model, threshold)?;
    Ok((rep, scores, set.labels))
}

/// One setting of the ε sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    /// `eps-0.5`, `eps-1`, `eps-off` or `nonfed`.
    pub label: String,
    pub eval: EvalReport,
    #[serde(skip)]
    pub roc: Option<RocCurve>,
}

pub fn sweep_label(eps: Option<Epsilon>) -> String {
    match eps {
        Some(e) => format!("eps-{e}"),
        None => "nonfed".to_owned(),
    }
}

/// Pre-trains once, then fine-tunes federatedly for every ε (finite values
/// use the configured clip norm; `off` bypasses the privacy step, so updates
/// are neither clipped nor noised) and once more with
/// centralized fine-tuning on the pooled client training data for the same
/// number of epochs. Settings share the seed, so they see the same local
/// shuffles and, up to scale, the same noise draws.
pub fn sweep_epsilon(cfg: &ExperimentConfig, epsilons: &[Epsilon]) -> Result<Vec<SweepEntry>> {
    cfg.validate()?;
    let seed = cfg.seed();
    let shards = load_clients(cfg, seed)?;
    let ds = load_pretrain(cfg, seed)?;
    let p = pretrain(cfg, &ds, seed)?;
    let set = EvalSet::new(&test_union(&shards), &p.bounds, &cfg.data.labels)?;
    let entry = |label: String, model: &MlpModel| -> Result<SweepEntry> {
        let (eval, scores) = set.evaluate(model, cfg.threshold)?;
        Ok(SweepEntry {
            label,
            eval,
            roc: roc(&scores, &set.labels).ok(),
        })
    };

    let mut out = Vec::with_capacity(epsilons.len() + 1);
    for &eps in epsilons {
        let privacy = match eps {
            Epsilon::Finite(_) => Some(PrivacyConfig::with_epsilon(eps, cfg.privacy.clip_norm)),
            Epsilon::Off => None,
        };
        if let Some(pc) = &privacy {
            pc.validate()?;
        }
        let (m, _) = finetune_federated(
            p.model.clone(),
            &p.bounds,
            &shards,
            cfg,
            privacy.as_ref(),
            seed,
            None,
        )?;
        out.push(entry(sweep_label(Some(eps)), &m)?);
    }

    let mut central = p.model.clone();
    let pooled = prepare_examples(&train_union(&shards), &p.bounds, &cfg.data.labels)?;
    ensure!(
        !pooled.is_empty(),
        InsufficientData,
        "no fine-tune training samples"
    );
    train_centralized(
        &mut central,
        &pooled,
        cfg.finetune.rounds * cfg.finetune.local_epochs,
        cfg.finetune.batch_size,
        cfg.finetune.lr,
        seed,
        "nonfed-epochs",
    )?;
    out.push(entry(sweep_label(None), &central)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CohortSpec;

    fn small_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.model.dims = vec![12, 8, 4, 1];
        cfg.pretrain.epochs = 3;
        cfg.finetune.rounds = 2;
        cfg.data.pretrain = DataSource::cohort(CohortSpec {
            n_users: 4,
            samples_per_user: (20, 30),
            ..CohortSpec::pretrain_default()
        });
        cfg.data.finetune = DataSource::cohort(CohortSpec {
            n_users: 3,
            samples_per_user: (15, 20),
            ..CohortSpec::finetune_default()
        });
        cfg
    }

    #[test]
    fn modes_share_the_test_set() {
        let mut cfg = small_cfg();
        let mut sets = Vec::new();
        for mode in [Mode::Plain, Mode::Pretrained, Mode::Finetuned] {
            cfg.mode = mode;
            let a = run_mode(&cfg).unwrap();
            assert_eq!(a.report.mode, mode);
            sets.push((a.report.n_test, a.labels.clone()));
            assert_eq!(a.rounds.len(), if mode == Mode::Finetuned { 2 } else { 0 });
        }
        assert!(sets.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn plain_mode_ignores_pretrain_source() {
        let mut cfg = small_cfg();
        cfg.mode = Mode::Plain;
        let a = run_mode(&cfg).unwrap();
        cfg.data.pretrain = DataSource::csv("/nonexistent/pretrain.csv");
        let b = run_mode(&cfg).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.checkpoint, b.checkpoint);
    }

    #[test]
    fn zero_rounds_return_the_pretrained_model() {
        let cfg = small_cfg();
        let ds = load_pretrain(&cfg, 1).unwrap();
        let p = pretrain(&cfg, &ds, 1).unwrap();
        let shards = load_clients(&cfg, 1).unwrap();
        let mut c0 = cfg.clone();
        c0.finetune.rounds = 0;
        let (m, recs) =
            finetune_federated(p.model.clone(), &p.bounds, &shards, &c0, None, 1, None).unwrap();
        assert_eq!(m, p.model);
        assert!(recs.is_empty());
    }

    #[test]
    fn zero_learning_rate_pretrain_keeps_init() {
        let mut cfg = small_cfg();
        cfg.pretrain.lr = 0.0;
        let ds = load_pretrain(&cfg, 3).unwrap();
        let p = pretrain(&cfg, &ds, 3).unwrap();
        let init = MlpModel::new(
            &cfg.model.dims,
            cfg.model.dropout,
            &mut stream(3, &[tag("init"), tag("pretrain")]),
        )
        .unwrap();
        assert_eq!(p.model, init);
    }

    #[test]
    fn runs_are_deterministic_and_checkpoints_reproduce_metrics() {
        let cfg = small_cfg();
        let a = run_mode(&cfg).unwrap();
        let b = run_mode(&cfg).unwrap();
        assert_eq!(a.report.to_json(), b.report.to_json());
        let ck = Checkpoint::read_from(&mut a.checkpoint.to_bytes().as_slice()).unwrap();
        let shards = load_clients(&cfg, cfg.seed()).unwrap();
        let test = Dataset::new(test_union(&shards)).unwrap();
        let (rep, scores, _) =
            evaluate_checkpoint(&ck, &test, &cfg.data.labels, cfg.threshold).unwrap();
        assert_eq!(rep, a.report.eval);
        assert_eq!(scores, a.scores);
    }

    #[test]
    fn width_mismatch_is_a_config_error() {
        let mut cfg = small_cfg();
        cfg.model.dims = vec![5, 4, 1];
        assert!(matches!(run_mode(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn sweep_emits_one_entry_per_setting() {
        let cfg = small_cfg();
        let eps = [Epsilon::Finite(0.5), Epsilon::Finite(1.0), Epsilon::Off];
        let out = sweep_epsilon(&cfg, &eps).unwrap();
        let labels: Vec<&str> = out.iter().map(|e| e.label.as_str()).collect();
        assert_eq!(labels, ["eps-0.5", "eps-1", "eps-off", "nonfed"]);
    }
}
