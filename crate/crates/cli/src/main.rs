use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use fedstress::data::{
    format_feature_csv, generate_cohort, read_feature_csv, CohortRole, CohortSpec, Dataset,
};
use fedstress::dp::Epsilon;
use fedstress::pipeline::{
    evaluate_checkpoint, load_pretrain, pretrain, run_mode, sweep_epsilon, write_atomic,
    Checkpoint, ExperimentConfig, Mode, CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE, REPORT_FILE,
    ROC_FILE,
};
use fedstress::signal::{extract_dataset, read_ema_csv, read_raw_csv};
use fedstress::{Error, ErrorKind};

/// Federated, differentially private transfer learning for stress detection.
#[derive(Parser)]
#[command(name = "fedstress", version)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Built-in defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory; nothing is written anywhere else.
    #[arg(long)]
    out: PathBuf,

    /// Seed override (takes precedence over the config).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic pre-training and fine-tune cohorts as feature CSVs.
    GenData(Common),
    /// Turn a raw PPG recording plus EMA prompts into a feature CSV.
    ExtractFeatures {
        #[command(flatten)]
        common: Common,
        /// Raw recording CSV (time_ms, ppg, optional accel_x/y/z).
        #[arg(long)]
        raw: PathBuf,
        /// EMA prompt CSV (user_id, timestamp_ms, stress_level).
        #[arg(long)]
        ema: PathBuf,
        /// User whose prompts are matched against the recording.
        #[arg(long)]
        user: String,
    },
    /// Pre-train on the pre-training corpus and save the checkpoint.
    Pretrain(Common),
    /// Train and evaluate one mode.
    Run {
        #[command(flatten)]
        common: Common,
        /// plain, pretrained or finetuned (overrides the config).
        #[arg(long)]
        mode: Option<String>,
    },
    /// Fine-tune under several privacy budgets plus a non-federated
    /// reference, writing one ROC CSV per setting.
    SweepEpsilon {
        #[command(flatten)]
        common: Common,
        /// Comma-separated budgets, e.g. `0.5,1,off` (overrides the config).
        #[arg(long)]
        epsilons: Option<String>,
    },
    /// Score a checkpoint on a labelled feature CSV.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Labelled feature CSV to score.
        #[arg(long)]
        data: PathBuf,
    },
}

fn load_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = Some(s);
    }
    Ok(cfg)
}

fn prepare_out(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn put(dir: &Path, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
    let p = dir.join(name);
    write_atomic(&p, bytes)?;
    info!("wrote {}", p.display());
    Ok(())
}

fn csv_bytes(ds: &Dataset) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    format_feature_csv(ds, &mut buf)?;
    Ok(buf)
}

fn parse_epsilons(list: &str) -> anyhow::Result<Vec<Epsilon>> {
    let eps = list
        .split(',')
        .map(|s| {
            s.parse::<Epsilon>()
                .map_err(|e| Error::Config(format!("--epsilons: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if eps.is_empty() {
        return Err(Error::Config("--epsilons must list at least one value".into()).into());
    }
    Ok(eps)
}

fn gen_data(common: &Common) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    cfg.validate()?;
    prepare_out(&common.out)?;
    let seed = cfg.seed();
    for (role, src, fallback, name) in [
        (
            CohortRole::Pretrain,
            &cfg.data.pretrain,
            CohortSpec::pretrain_default(),
            "pretrain.csv",
        ),
        (
            CohortRole::Finetune,
            &cfg.data.finetune,
            CohortSpec::finetune_default(),
            "finetune.csv",
        ),
    ] {
        let spec = CohortSpec {
            seed,
            ..src.cohort.clone().unwrap_or(fallback)
        };
        let ds = generate_cohort(&spec, role)?;
        println!("{name}: {} samples", ds.len());
        put(&common.out, name, &csv_bytes(&ds)?)?;
    }
    Ok(())
}

fn extract_features(common: &Common, raw: &Path, ema: &Path, user: &str) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    cfg.validate()?;
    let rec = read_raw_csv(raw)?;
    let prompts = read_ema_csv(ema)?;
    let (ds, skipped) = extract_dataset(&rec, &prompts, user, &cfg.extraction)?;
    if ds.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{}: no usable prompts for user {user:?}",
            ema.display()
        ))
        .into());
    }
    if skipped > 0 {
        warn!("skipped {skipped} prompts without usable beats");
    }
    prepare_out(&common.out)?;
    put(&common.out, "features.csv", &csv_bytes(&ds)?)?;
    println!("features.csv: {} rows, {skipped} prompts skipped", ds.len());
    Ok(())
}

fn pretrain_cmd(common: &Common) -> anyhow::Result<()> {
    let mut cfg = load_config(common)?;
    cfg.validate()?;
    let seed = cfg.seed();
    cfg.seed = Some(seed);
    let ds = load_pretrain(&cfg, seed)?;
    let p = pretrain(&cfg, &ds, seed)?;
    prepare_out(&common.out)?;
    put(&common.out, CONFIG_FILE, cfg.to_toml()?.as_bytes())?;
    let mut losses = String::from("epoch,loss\n");
    for (i, l) in p.epoch_losses.iter().enumerate() {
        losses.push_str(&format!("{},{l}\n", i + 1));
    }
    put(&common.out, "pretrain_loss.csv", losses.as_bytes())?;
    let ck = Checkpoint {
        model: p.model,
        bounds: p.bounds,
    };
    put(&common.out, CHECKPOINT_FILE, &ck.to_bytes())?;
    println!(
        "pre-trained on {} samples; final loss {:.4}",
        ds.len(),
        p.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn run_cmd(common: &Common, mode: Option<&str>) -> anyhow::Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(m) = mode {
        cfg.mode = m.parse::<Mode>()?;
    }
    cfg.validate()?;
    let art = run_mode(&cfg)?;
    prepare_out(&common.out)?;
    for p in art.save(&common.out)? {
        info!("wrote {}", p.display());
    }
    print!("{}", art.report.to_table());
    Ok(())
}

fn sweep_cmd(common: &Common, epsilons: Option<&str>) -> anyhow::Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(list) = epsilons {
        cfg.sweep.epsilons = parse_epsilons(list)?;
    }
    cfg.validate()?;
    cfg.seed = Some(cfg.seed());
    let entries = sweep_epsilon(&cfg, &cfg.sweep.epsilons)?;
    prepare_out(&common.out)?;
    put(&common.out, CONFIG_FILE, cfg.to_toml()?.as_bytes())?;
    let mut table = String::from("setting     accuracy  f1        recall    precision auc\n");
    for e in &entries {
        let Some(curve) = &e.roc else {
            return Err(Error::InsufficientData(format!(
                "{}: the test set holds a single class, so no ROC curve exists",
                e.label
            ))
            .into());
        };
        put(
            &common.out,
            &format!("roc-{}.csv", e.label),
            curve.to_csv().as_bytes(),
        )?;
        let m = &e.eval.metrics;
        table.push_str(&format!(
            "{:<11} {:<9.4} {:<9.4} {:<9.4} {:<9.4} {:.4}\n",
            e.label, m.accuracy, m.f1, m.recall, m.precision, curve.auc
        ));
    }
    let mut json = serde_json::to_string_pretty(&entries).context("serializing sweep summary")?;
    json.push('\n');
    put(&common.out, "sweep.json", json.as_bytes())?;
    put(&common.out, REPORT_FILE, table.as_bytes())?;
    print!("{table}");
    Ok(())
}

fn evaluate_cmd(common: &Common, checkpoint: &Path, data: &Path) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    cfg.validate()?;
    let ck = Checkpoint::load(checkpoint)?;
    let ds = read_feature_csv(data)?;
    let (report, scores, labels) = evaluate_checkpoint(&ck, &ds, &cfg.data.labels, cfg.threshold)?;
    prepare_out(&common.out)?;
    let mut json = serde_json::to_string_pretty(&report).context("serializing metrics")?;
    json.push('\n');
    put(&common.out, METRICS_FILE, json.as_bytes())?;
    match fedstress::eval::roc(&scores, &labels) {
        Ok(curve) => put(&common.out, ROC_FILE, curve.to_csv().as_bytes())?,
        Err(e) => warn!("no ROC curve: {e}"),
    }
    let m = &report.metrics;
    println!(
        "n {}  accuracy {:.4}  f1 {:.4}  recall {:.4}  precision {:.4}  auc {}",
        report.n,
        m.accuracy,
        m.f1,
        m.recall,
        m.precision,
        report.auc.map_or("n/a".to_owned(), |a| format!("{a:.4}"))
    );
    Ok(())
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::GenData(c) => gen_data(c),
        Command::ExtractFeatures {
            common,
            raw,
            ema,
            user,
        } => extract_features(common, raw, ema, user),
        Command::Pretrain(c) => pretrain_cmd(c),
        Command::Run { common, mode } => run_cmd(common, mode.as_deref()),
        Command::SweepEpsilon { common, epsilons } => sweep_cmd(common, epsilons.as_deref()),
        Command::Evaluate {
            common,
            checkpoint,
            data,
        } => evaluate_cmd(common, checkpoint, data),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>().map(Error::kind) {
        Some(ErrorKind::Config) => 2,
        Some(ErrorKind::Data) => 3,
        Some(ErrorKind::Runtime) | None => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
