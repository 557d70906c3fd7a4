//! Synthetic stand-in for the study cohorts.
//!
//! Each user gets a random mean shift and a positive rate. Class-conditional
//! latent vectors are Gaussians separated along a discriminative direction,
//! with stressed samples more dispersed than calm ones. The fine-tune role
//! rotates that direction, offsets every user along it and scales the
//! per-user shift up, so a model fitted on the pre-training cohort transfers
//! imperfectly.
//! Latents are mapped onto HRV-like feature scales (bpm, ms, fractions).

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Sample};
use crate::error::{ensure, Result};
use crate::rng::{stream, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CohortRole {
    Pretrain,
    Finetune,
}

impl CohortRole {
    fn prefix(self) -> &'static str {
        match self {
            CohortRole::Pretrain => "pt",
            CohortRole::Finetune => "ft",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSpec {
    pub n_users: usize,
    /// Inclusive range of samples drawn per user.
    pub samples_per_user: (usize, usize),
    /// Inclusive range of per-user positive (stressed) rates.
    pub positive_rate: (f64, f64),
    /// Standard deviation of the per-user latent mean shift.
    pub user_shift_scale: f64,
    /// Within-user latent noise standard deviation.
    pub noise_scale: f64,
    /// Multiplier on `noise_scale` for stressed samples, which makes the
    /// optimal decision boundary quadratic rather than linear.
    pub positive_spread: f64,
    /// Distance between the class means along the discriminative direction.
    pub class_separation: f64,
    /// Angle in degrees between the fine-tune and pre-train directions.
    pub rotation_deg: f64,
    /// Multiplier on `user_shift_scale` for the fine-tune role.
    pub finetune_shift_multiplier: f64,
    /// Latent offset along the fine-tune discriminative direction shared by
    /// every fine-tune user, as from a different device or population
    /// baseline. Positive values make everyone look more stressed.
    pub finetune_offset: f64,
    pub feature_dim: usize,
    /// Map variability features through a log-normal transform instead of
    /// a linear one.
    pub skewed_features: bool,
    /// Spacing between a user's consecutive samples.
    pub interval_ms: i64,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self::pretrain_default()
    }
}

impl CohortSpec {
    /// 30 users, about 3271 samples in expectation.
    pub fn pretrain_default() -> Self {
        Self {
            n_users: 30,
            samples_per_user: (89, 129),
            positive_rate: (0.3, 0.5),
            user_shift_scale: 0.3,
            noise_scale: 1.0,
            positive_spread: 2.5,
            class_separation: 0.75,
            rotation_deg: 20.0,
            finetune_shift_multiplier: 2.0,
            finetune_offset: -1.0,
            feature_dim: 12,
            skewed_features: true,
            interval_ms: 3 * 3_600_000,
            seed: 42,
        }
    }

    /// 24 users, about 1220 samples in expectation.
    pub fn finetune_default() -> Self {
        Self {
            n_users: 24,
            samples_per_user: (41, 61),
            ..Self::pretrain_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.n_users > 0, Config, "cohort.n_users must be positive");
        let (lo, hi) = self.samples_per_user;
        ensure!(
            lo > 0 && lo <= hi,
            Config,
            "cohort.samples_per_user must be a positive range, got ({lo}, {hi})"
        );
        let (rlo, rhi) = self.positive_rate;
        ensure!(
            rlo > 0.0 && rhi < 1.0 && rlo <= rhi,
            Config,
            "cohort.positive_rate must lie in (0, 1), got ({rlo}, {rhi})"
        );
        for (name, v) in [
            ("user_shift_scale", self.user_shift_scale),
            ("noise_scale", self.noise_scale),
            ("positive_spread", self.positive_spread),
            ("class_separation", self.class_separation),
            ("finetune_shift_multiplier", self.finetune_shift_multiplier),
        ] {
            ensure!(
                v >= 0.0 && v.is_finite(),
                Config,
                "cohort.{name} must be non-negative, got {v}"
            );
        }
        ensure!(
            (1..=FEATURE_SCALES.len()).contains(&self.feature_dim),
            Config,
            "cohort.feature_dim must be in 1..={}, got {}",
            FEATURE_SCALES.len(),
            self.feature_dim
        );
        ensure!(
            self.finetune_offset.is_finite(),
            Config,
            "cohort.finetune_offset must be finite, got {}",
            self.finetune_offset
        );
        ensure!(
            self.interval_ms > 0,
            Config,
            "cohort.interval_ms must be positive"
        );
        Ok(())
    }
}

/// How a latent coordinate becomes a feature value.
#[derive(Debug, Clone, Copy)]
enum Scale {
    /// `centre + spread · z`, clamped to `[lo, hi]`.
    Linear {
        centre: f64,
        spread: f64,
        lo: f64,
        hi: f64,
    },
    /// `centre · exp(sigma · z)`: right-skewed and positive, like most
    /// variability measures.
    LogNormal { centre: f64, sigma: f64 },
}

const fn lin(centre: f64, spread: f64) -> Scale {
    Scale::Linear {
        centre,
        spread,
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    }
}

const fn frac(centre: f64, spread: f64) -> Scale {
    Scale::Linear {
        centre,
        spread,
        lo: 0.0,
        hi: 1.0,
    }
}

const fn logn(centre: f64, sigma: f64) -> Scale {
    Scale::LogNormal { centre, sigma }
}

/// Per-feature scales in the order bpm, ibi, sdnn, sdsd, rmssd, pnn20,
/// pnn50, mad, sd1, sd2, s, sd1/sd2, br.
const FEATURE_SCALES: [Scale; 13] = [
    lin(75.0, 10.0),
    lin(800.0, 100.0),
    logn(50.0, 0.35),
    logn(30.0, 0.4),
    logn(35.0, 0.4),
    frac(0.5, 0.12),
    frac(0.2, 0.08),
    logn(30.0, 0.35),
    logn(25.0, 0.4),
    logn(60.0, 0.35),
    logn(5000.0, 0.6),
    logn(0.45, 0.25),
    lin(15.0, 2.5),
];

impl Scale {
    fn apply(self, z: f64, skewed: bool) -> f64 {
        match self {
            Scale::Linear {
                centre,
                spread,
                lo,
                hi,
            } => (centre + spread * z).clamp(lo, hi),
            Scale::LogNormal { centre, sigma } if skewed => centre * (sigma * z).exp(),
            Scale::LogNormal { centre, sigma } => centre * (1.0 + sigma * z),
        }
    }
}

const EPOCH_MS: i64 = 1_650_000_000_000;

fn gaussian_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// The discriminative direction for a role. Both roles derive from the same
/// seed so the pre-training and fine-tune cohorts of one experiment share a
/// base direction.
fn direction(spec: &CohortSpec, role: CohortRole) -> Vec<f64> {
    let d = spec.feature_dim;
    let mut rng = stream(spec.seed, &[tag("cohort-direction")]);
    let mut base = gaussian_vec(d, &mut rng);
    normalize(&mut base);
    if role == CohortRole::Pretrain || d == 1 {
        return base;
    }
    let mut ortho = gaussian_vec(d, &mut rng);
    let proj: f64 = ortho.iter().zip(&base).map(|(a, b)| a * b).sum();
    ortho
        .iter_mut()
        .zip(&base)
        .for_each(|(o, b)| *o -= proj * b);
    normalize(&mut ortho);
    let theta = spec.rotation_deg.to_radians();
    base.iter()
        .zip(&ortho)
        .map(|(b, o)| theta.cos() * b + theta.sin() * o)
        .collect()
}

pub fn generate_cohort(spec: &CohortSpec, role: CohortRole) -> Result<Dataset> {
    spec.validate()?;
    let d = spec.feature_dim;
    let dir = direction(spec, role);
    let offset: Vec<f64> = match role {
        CohortRole::Pretrain => vec![0.0; d],
        CohortRole::Finetune => dir.iter().map(|x| x * spec.finetune_offset).collect(),
    };
    let shift_scale = match role {
        CohortRole::Pretrain => spec.user_shift_scale,
        CohortRole::Finetune => spec.user_shift_scale * spec.finetune_shift_multiplier,
    };
    let digits = spec.n_users.to_string().len().max(2);
    let mut samples = Vec::new();
    for u in 0..spec.n_users {
        let user_id = format!("{}{:0digits$}", role.prefix(), u + 1);
        let mut rng = stream(spec.seed, &[tag(role.prefix()), tag(&user_id)]);
        let n = rng.random_range(spec.samples_per_user.0..=spec.samples_per_user.1);
        let (rlo, rhi) = spec.positive_rate;
        let rate = if rhi > rlo {
            rng.random_range(rlo..=rhi)
        } else {
            rlo
        };
        let shift: Vec<f64> = gaussian_vec(d, &mut rng)
            .into_iter()
            .zip(&offset)
            .map(|(z, o)| o + z * shift_scale)
            .collect();
        let start = EPOCH_MS + rng.random_range(0..spec.interval_ms);
        for k in 0..n {
            let positive = rng.random::<f64>() < rate;
            let sign = if positive { 0.5 } else { -0.5 };
            let noise_sd = if positive {
                spec.noise_scale * spec.positive_spread
            } else {
                spec.noise_scale
            };
            let features = (0..d)
                .map(|j| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    let z = shift[j] + sign * spec.class_separation * dir[j] + noise_sd * noise;
                    FEATURE_SCALES[j].apply(z, spec.skewed_features)
                })
                .collect();
            let stress_level = if positive {
                rng.random_range(3..=4)
            } else {
                rng.random_range(0..=2)
            };
            samples.push(Sample {
                user_id: user_id.clone(),
                timestamp_ms: start + k as i64 * spec.interval_ms,
                features,
                stress_level,
            });
        }
    }
    Dataset::new(samples)
}
