use std::collections::BTreeMap;
use std::sync::Arc;

use fedstress::data::{generate_cohort, CohortRole, CohortSpec, LabelScheme};
use fedstress::nn::{train_epoch, Example, MlpModel, Optimizer, OptimizerKind};
use fedstress::pipeline::{
    load_clients, load_pretrain, pretrain, run_mode, DataSource, ExperimentConfig, Mode,
};
use fedstress::rng::{stream, tag};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn cfg(mode: Mode, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        mode,
        seed: Some(seed),
        ..ExperimentConfig::default()
    }
}

#[test]
fn pretrain_fits_separable_data() {
    let mut cfg = ExperimentConfig::default();
    let spec = CohortSpec {
        noise_scale: 0.05,
        positive_spread: 1.0,
        user_shift_scale: 0.0,
        class_separation: 2.0,
        skewed_features: false,
        ..CohortSpec::pretrain_default()
    };
    cfg.data.pretrain = DataSource::cohort(spec.clone());
    let ds = generate_cohort(&spec, CohortRole::Pretrain).unwrap();
    let p = pretrain(&cfg, &ds, 5).unwrap();
    let ex = LabelScheme::default().examples(ds.samples()).unwrap();
    let rows: Vec<Vec<f64>> = ex
        .iter()
        .map(|e| p.bounds.apply_row(&e.features).unwrap())
        .collect();
    let scores = p.model.predict(&rows).unwrap();
    let correct = scores
        .iter()
        .zip(&ex)
        .filter(|(s, e)| u8::from(**s >= 0.5) == e.label)
        .count();
    let acc = correct as f64 / ex.len() as f64;
    assert!(acc > 0.95, "train accuracy {acc}");
}

#[test]
fn pretrain_loss_falls_on_default_cohort() {
    let seeds: Vec<u64> = (1..=20).collect();
    let falling = seeds
        .iter()
        .filter(|&&s| {
            let c = cfg(Mode::Pretrained, s);
            let p = pretrain(&c, &load_pretrain(&c, s).unwrap(), s).unwrap();
            p.epoch_losses.len() == 50 && p.epoch_losses[49] < p.epoch_losses[0]
        })
        .count();
    assert!(
        falling * 100 >= 95 * seeds.len(),
        "{falling}/{}",
        seeds.len()
    );
}

#[test]
fn network_can_memorize_one_sample() {
    let mut rng = stream(3, &[tag("memorize")]);
    let mut model = MlpModel::new(&[12, 128, 32, 1], 0.0, &mut rng).unwrap();
    let data = vec![Example::new((0..12).map(|i| i as f64 / 12.0).collect(), 1)];
    let mut opt = Optimizer::new(
        OptimizerKind::Adam { lr: 0.01 },
        Arc::clone(model.params().layout()),
    );
    for _ in 0..200 {
        train_epoch(&mut model, &mut opt, &data, 1, &mut rng).unwrap();
    }
    let refs: Vec<&Example> = data.iter().collect();
    assert!(model.mean_loss(&refs).unwrap() < 1e-3);
}

/// Mean over users of a plain global model's per-user test accuracy.
fn mean_user_accuracy(shift: f64, seed: u64) -> f64 {
    let mut c = cfg(Mode::Plain, seed);
    c.data.finetune = DataSource::cohort(CohortSpec {
        user_shift_scale: shift,
        ..CohortSpec::finetune_default()
    });
    let art = run_mode(&c).unwrap();
    let shards = load_clients(&c, seed).unwrap();
    let mut per_user: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    let owners = shards
        .iter()
        .flat_map(|s| s.test.iter().map(move |_| s.user_id.as_str()));
    for ((user, score), label) in owners.zip(&art.scores).zip(&art.labels) {
        let e = per_user.entry(user).or_default();
        e.0 += usize::from(u8::from(*score >= 0.5) == *label);
        e.1 += 1;
    }
    per_user
        .values()
        .map(|(k, n)| *k as f64 / *n as f64)
        .sum::<f64>()
        / per_user.len() as f64
}

#[test]
fn user_shift_lowers_per_user_accuracy() {
    let levels = [0.0, 0.5, 1.0];
    let means: Vec<f64> = levels
        .iter()
        .map(|&s| (1..=5).map(|seed| mean_user_accuracy(s, seed)).sum::<f64>() / 5.0)
        .collect();
    assert!(means.windows(2).all(|w| w[0] > w[1]), "{means:?}");
}

fn accuracy(mode: Mode, seed: u64) -> f64 {
    run_mode(&cfg(mode, seed))
        .unwrap()
        .report
        .eval
        .metrics
        .accuracy
}

#[test]
fn finetuning_beats_zero_shot_and_plain() {
    let mut wins = 0;
    let mut gap = Vec::new();
    for seed in 1..=5 {
        let ft = accuracy(Mode::Finetuned, seed);
        wins += usize::from(ft > accuracy(Mode::Pretrained, seed));
        gap.push(ft - accuracy(Mode::Plain, seed));
    }
    assert!(wins >= 4, "fine-tuned beat pre-trained on {wins}/5 seeds");
    assert!(median(gap.clone()) > 0.0, "{gap:?}");
}

#[test]
fn bounds_are_fitted_once_and_reused() {
    let c = cfg(Mode::Finetuned, 2);
    let p = pretrain(&c, &load_pretrain(&c, 2).unwrap(), 2).unwrap();
    let art = run_mode(&c).unwrap();
    assert_eq!(art.checkpoint.bounds, p.bounds);
}
