//! Simulated FedAvg rounds over per-user clients.
//!
//! Each round copies the global parameters to every client, trains locally,
//! privatizes the resulting deltas and averages them back into the global
//! model. Clients train in parallel; aggregation sorts updates by client id
//! so the result does not depend on scheduling.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::{privatize_update, NoisedUpdate, PrivacyConfig};
use crate::error::{ensure, Error, Result};
use crate::nn::{train_epoch, Example, MlpModel, Optimizer, OptimizerKind, ParameterSet};
use crate::rng::{stream, tag};

/// The server-side model. Its parameters change only through [`aggregate`].
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    model: MlpModel,
}

impl GlobalModel {
    pub fn new(model: MlpModel) -> Self {
        Self { model }
    }

    pub fn model(&self) -> &MlpModel {
        &self.model
    }

    pub fn into_model(self) -> MlpModel {
        self.model
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Start every round with a fresh optimizer state.
    pub reset_optimizer: bool,
}

impl LocalTrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.epochs >= 1, Config, "local epochs must be at least 1");
        ensure!(
            self.batch_size >= 1,
            Config,
            "batch_size must be at least 1"
        );
        let lr = self.optimizer.learning_rate();
        ensure!(
            lr >= 0.0 && lr.is_finite(),
            Config,
            "learning rate must be non-negative, got {lr}"
        );
        Ok(())
    }
}

/// One participant. The client owns its training examples and nothing else
/// touches them.
#[derive(Debug, Clone)]
pub struct ClientState {
    client_id: String,
    train: Vec<Example>,
    model: MlpModel,
    optimizer: Optimizer,
    optimizer_kind: OptimizerKind,
}

impl ClientState {
    pub fn new(
        client_id: impl Into<String>,
        train: Vec<Example>,
        template: &MlpModel,
        optimizer: OptimizerKind,
    ) -> Self {
        let model = template.clone();
        let optimizer_state = Optimizer::new(optimizer, Arc::clone(model.params().layout()));
        Self {
            client_id: client_id.into(),
            train,
            model,
            optimizer: optimizer_state,
            optimizer_kind: optimizer,
        }
    }

    pub fn client_id(&self) -> &str {
        &self.client_id
    }

    pub fn sample_count(&self) -> usize {
        self.train.len()
    }

    pub fn model(&self) -> &MlpModel {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut MlpModel {
        &mut self.model
    }
}

/// Copies the global parameters into every client.
pub fn distribute(global: &GlobalModel, clients: &mut [ClientState]) -> Result<()> {
    for c in clients.iter_mut() {
        c.model.set_params(global.model.params().clone())?;
    }
    Ok(())
}

/// Outcome of one client's local training.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub delta: ParameterSet,
    /// Mean minibatch loss of each local epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains the client's current model for `cfg.epochs` and returns the
/// parameter change. A client without training data returns `None`.
pub fn local_train(
    client: &mut ClientState,
    cfg: &LocalTrainConfig,
    seed: u64,
    round: usize,
) -> Result<Option<LocalUpdate>> {
    cfg.validate()?;
    if client.train.is_empty() {
        log::warn!("client {} has no training data; skipped", client.client_id);
        return Ok(None);
    }
    if cfg.reset_optimizer || client.optimizer_kind != cfg.optimizer {
        client.optimizer =
            Optimizer::new(cfg.optimizer, Arc::clone(client.model.params().layout()));
        client.optimizer_kind = cfg.optimizer;
    }
    let received = client.model.params().clone();
    let mut rng = stream(
        seed,
        &[tag("local-train"), tag(&client.client_id), round as u64],
    );
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        epoch_losses.push(train_epoch(
            &mut client.model,
            &mut client.optimizer,
            &client.train,
            cfg.batch_size,
            &mut rng,
        )?);
    }
    Ok(Some(LocalUpdate {
        delta: client.model.params().sub(&received)?,
        epoch_losses,
    }))
}

/// FedAvg in delta form: `θ ← θ + Σ w_k Δ_k` with `w_k = 1/K`, or
/// `n_k / Σ n` when `weighted`. Updates are summed in client-id order.
pub fn aggregate(
    global: &mut GlobalModel,
    mut updates: Vec<NoisedUpdate>,
    weighted: bool,
) -> Result<()> {
    ensure!(
        !updates.is_empty(),
        InsufficientData,
        "aggregation with zero client updates; round aborted"
    );
    updates.sort_by(|a, b| a.client_id.cmp(&b.client_id));
    for u in &updates {
        global.model.params().check_layout(&u.delta)?;
    }
    let total_samples: usize = updates.iter().map(|u| u.sample_count).sum();
    if weighted {
        ensure!(
            total_samples > 0,
            InsufficientData,
            "weighted aggregation with zero samples"
        );
    }
    let mut sum = vec![0.0; global.model.params().len()];
    for u in &updates {
        let w = if weighted { u.sample_count as f64 } else { 1.0 };
        sum.iter_mut()
            .zip(u.delta.values())
            .for_each(|(s, d)| *s += w * d);
    }
    let denom = if weighted {
        total_samples as f64
    } else {
        updates.len() as f64
    };
    global
        .model
        .params_mut()
        .values_mut()
        .iter_mut()
        .zip(&sum)
        .for_each(|(p, s)| *p += s / denom);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundConfig {
    pub local: LocalTrainConfig,
    pub weighted: bool,
}

/// Held-out metrics of the global model after a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundEval {
    pub accuracy: f64,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    pub participants: Vec<String>,
    pub skipped: Vec<String>,
    /// Final local-epoch loss per participant, in participant order.
    pub client_losses: Vec<f64>,
    /// Global model loss over all participants' training data.
    pub pre_loss: f64,
    pub post_loss: f64,
    pub wall_time_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<RoundEval>,
}

fn pooled_loss(model: &MlpModel, clients: &[ClientState]) -> Result<f64> {
    let all: Vec<&Example> = clients.iter().flat_map(|c| c.train.iter()).collect();
    if all.is_empty() {
        return Ok(f64::NAN);
    }
    model.mean_loss(&all)
}

/// distribute → parallel local training → privatize → aggregate.
/// `privacy = None` bypasses the privacy module entirely. Randomness is
/// drawn from streams keyed by `(seed, client id, round)`.
pub fn run_round(
    global: &mut GlobalModel,
    clients: &mut [ClientState],
    cfg: &RoundConfig,
    privacy: Option<&PrivacyConfig>,
    seed: u64,
    round: usize,
) -> Result<RoundRecord> {
    ensure!(round >= 1, Contract, "round indices start at 1");
    cfg.local.validate()?;
    if let Some(p) = privacy {
        p.validate()?;
    }
    let start = Instant::now();
    let pre_loss = pooled_loss(&global.model, clients)?;
    distribute(global, clients)?;

    let results: Vec<Result<Option<(NoisedUpdate, f64)>>> = clients
        .par_iter_mut()
        .map(|c| {
            let Some(local) = local_train(c, &cfg.local, seed, round)? else {
                return Ok(None);
            };
            let loss = *local.epoch_losses.last().expect("epochs >= 1");
            let update = match privacy {
                Some(p) => {
                    let mut rng = stream(seed, &[tag("dp-noise"), tag(&c.client_id), round as u64]);
                    privatize_update(&c.client_id, c.train.len(), &local.delta, p, &mut rng)?
                }
                None => NoisedUpdate {
                    client_id: c.client_id.clone(),
                    sample_count: c.train.len(),
                    delta: local.delta,
                },
            };
            Ok(Some((update, loss)))
        })
        .collect();

    let mut participants = Vec::new();
    let mut skipped = Vec::new();
    let mut client_losses = Vec::new();
    let mut updates = Vec::new();
    for (c, r) in clients.iter().zip(results) {
        match r? {
            Some((u, loss)) => {
                participants.push(c.client_id.clone());
                client_losses.push(loss);
                updates.push(u);
            }
            None => skipped.push(c.client_id.clone()),
        }
    }
    aggregate(global, updates, cfg.weighted)?;
    let post_loss = pooled_loss(&global.model, clients)?;
    Ok(RoundRecord {
        round,
        participants,
        skipped,
        client_losses,
        pre_loss,
        post_loss,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        eval: None,
    })
}

/// Writes one JSON object per line.
pub fn write_round_log<W: Write>(records: &[RoundRecord], mut out: W) -> Result<()> {
    for r in records {
        let line =
            serde_json::to_string(r).map_err(|e| Error::Contract(format!("round record: {e}")))?;
        writeln!(out, "{line}").map_err(|e| Error::io("round log", e))?;
    }
    Ok(())
}
