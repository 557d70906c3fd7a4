//! Laplace-mechanism differential privacy for client updates.
//!
//! A client's raw model delta is first clipped to L2 norm `C` (which is
//! taken as the sensitivity Δf) and then every coordinate receives i.i.d.
//! `Laplace(0, C/ε)` noise before the update leaves the client. No privacy
//! accounting across rounds is performed; `ε` is a per-update knob.
//!
//! Note that per-coordinate noise calibrated to an L2 clip is the
//! conventional engineering choice, not a formal ε-DP guarantee under L2
//! sensitivity.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::nn::ParameterSet;

pub const DEFAULT_EPSILON: f64 = 1.0;
pub const DEFAULT_CLIP_NORM: f64 = 0.005;

/// Privacy budget per update. `Off` means infinite ε (no noise); in
/// configuration files it is spelled as the string `"off"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Epsilon {
    Finite(f64),
    Off,
}

impl fmt::Display for Epsilon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Epsilon::Finite(e) => write!(f, "{e}"),
            Epsilon::Off => f.write_str("off"),
        }
    }
}

impl std::str::FromStr for Epsilon {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("off") {
            return Ok(Epsilon::Off);
        }
        let e: f64 = s.parse().map_err(|_| {
            Error::Config(format!("epsilon must be a number or \"off\", got {s:?}"))
        })?;
        ensure!(
            e > 0.0 && e.is_finite(),
            Config,
            "epsilon must be positive and finite (use \"off\" to disable), got {e}"
        );
        Ok(Epsilon::Finite(e))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum EpsilonRepr {
    Number(f64),
    Text(String),
}

impl Serialize for Epsilon {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            Epsilon::Finite(e) => EpsilonRepr::Number(e),
            Epsilon::Off => EpsilonRepr::Text("off".into()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Epsilon {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match EpsilonRepr::deserialize(d)? {
            EpsilonRepr::Number(e) => e.to_string().parse(),
            EpsilonRepr::Text(t) => t.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrivacyConfig {
    pub epsilon: Epsilon,
    /// L2 clip norm `C`, used as the sensitivity Δf. May be infinite.
    pub clip_norm: f64,
    pub enabled: bool,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        Self {
            epsilon: Epsilon::Finite(DEFAULT_EPSILON),
            clip_norm: DEFAULT_CLIP_NORM,
            enabled: true,
        }
    }
}

impl PrivacyConfig {
    pub fn with_epsilon(epsilon: Epsilon, clip_norm: f64) -> Self {
        Self {
            epsilon,
            clip_norm,
            enabled: true,
        }
    }

    pub fn disabled(clip_norm: f64) -> Self {
        Self {
            epsilon: Epsilon::Off,
            clip_norm,
            enabled: false,
        }
    }

    pub fn adds_noise(&self) -> bool {
        self.enabled && matches!(self.epsilon, Epsilon::Finite(_))
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.clip_norm > 0.0,
            Config,
            "privacy.clip_norm must be positive, got {}",
            self.clip_norm
        );
        if let Epsilon::Finite(e) = self.epsilon {
            ensure!(
                e > 0.0 && e.is_finite(),
                Config,
                "privacy.epsilon must be positive, got {e}"
            );
        }
        ensure!(
            !self.adds_noise() || self.clip_norm.is_finite(),
            Config,
            "privacy.clip_norm must be finite when noise is enabled"
        );
        Ok(())
    }

    /// Laplace scale `b = C/ε`; zero when the mechanism is off.
    pub fn noise_scale(&self) -> f64 {
        match self.epsilon {
            Epsilon::Finite(e) if self.enabled => self.clip_norm / e,
            _ => 0.0,
        }
    }
}

/// A client update after clipping and noising, ready for aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisedUpdate {
    pub client_id: String,
    pub sample_count: usize,
    pub delta: ParameterSet,
}

/// Inverse-CDF map from `u ∈ (-0.5, 0.5)` to a `Laplace(0, b)` variate.
pub fn laplace_from_uniform(u: f64, b: f64) -> f64 {
    if u == 0.0 {
        return 0.0;
    }
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

fn draw_laplace<R: Rng + ?Sized>(b: f64, rng: &mut R) -> f64 {
    loop {
        let u = rng.random::<f64>() - 0.5;
        // u = -0.5 would map to an infinite draw
        if u > -0.5 {
            return laplace_from_uniform(u, b);
        }
    }
}

pub fn sample_laplace<R: Rng + ?Sized>(b: f64, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    ensure!(
        b > 0.0 && b.is_finite(),
        Config,
        "Laplace scale must be positive and finite, got {b}"
    );
    Ok((0..n).map(|_| draw_laplace(b, rng)).collect())
}

/// Clips `delta` to the configured norm and adds per-coordinate Laplace
/// noise. With the mechanism off the clipped delta is returned as is, and
/// with an infinite clip norm as well the input comes back bit-for-bit.
pub fn privatize_update<R: Rng + ?Sized>(
    client_id: &str,
    sample_count: usize,
    delta: &ParameterSet,
    cfg: &PrivacyConfig,
    rng: &mut R,
) -> Result<NoisedUpdate> {
    cfg.validate()?;
    let mut clipped = delta.clip_l2(cfg.clip_norm)?;
    if cfg.adds_noise() {
        let b = cfg.noise_scale();
        for v in clipped.values_mut() {
            *v += draw_laplace(b, rng);
        }
    }
    Ok(NoisedUpdate {
        client_id: client_id.to_owned(),
        sample_count,
        delta: clipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    #[test]
    fn median_maps_to_zero() {
        assert_eq!(laplace_from_uniform(0.0, 3.0), 0.0);
        assert!(laplace_from_uniform(0.25, 1.0) > 0.0);
        assert!(laplace_from_uniform(-0.25, 1.0) < 0.0);
        // P(X > x) = exp(-x/b)/2, so u = 0.25 is the 75th percentile: b·ln 2
        assert!((laplace_from_uniform(0.25, 2.0) - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn unit_scale_mean_is_near_zero() {
        let xs = sample_laplace(1.0, 1_000_000, &mut stream(1, &[])).unwrap();
        let (mean, _) = moments(&xs);
        assert!(mean.abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn variance_is_two_b_squared() {
        let xs = sample_laplace(2.0, 1_000_000, &mut stream(2, &[])).unwrap();
        let (_, var) = moments(&xs);
        assert!((var - 8.0).abs() < 0.05 * 8.0, "var {var}");
    }

    #[test]
    fn non_positive_scale_is_rejected() {
        let mut rng = stream(3, &[]);
        assert!(matches!(
            sample_laplace(0.0, 3, &mut rng),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            sample_laplace(-1.0, 3, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn noise_scale_reference_values() {
        assert_eq!(
            PrivacyConfig::with_epsilon(Epsilon::Finite(1.0), 1.0).noise_scale(),
            1.0
        );
        assert_eq!(
            PrivacyConfig::with_epsilon(Epsilon::Finite(0.5), 2.0).noise_scale(),
            4.0
        );
        assert_eq!(PrivacyConfig::disabled(1.0).noise_scale(), 0.0);
        let mut off = PrivacyConfig::with_epsilon(Epsilon::Finite(1.0), 1.0);
        off.enabled = false;
        assert_eq!(off.noise_scale(), 0.0);
    }

    #[test]
    fn disabled_mechanism_returns_clipped_input() {
        let delta = ParameterSet::flat(vec![3.0, 4.0]);
        let mut rng = stream(4, &[]);
        let out =
            privatize_update("u", 1, &delta, &PrivacyConfig::disabled(1.0), &mut rng).unwrap();
        assert_eq!(out.delta, delta.clip_l2(1.0).unwrap());
        let raw = privatize_update(
            "u",
            1,
            &delta,
            &PrivacyConfig::disabled(f64::INFINITY),
            &mut rng,
        )
        .unwrap();
        assert_eq!(raw.delta, delta);
    }

    #[test]
    fn enabled_flag_false_matches_infinite_epsilon() {
        let delta = ParameterSet::flat(vec![0.3, -0.1, 2.0]);
        let a = PrivacyConfig {
            epsilon: Epsilon::Finite(1.0),
            clip_norm: 1.0,
            enabled: false,
        };
        let b = PrivacyConfig::with_epsilon(Epsilon::Off, 1.0);
        let ua = privatize_update("u", 1, &delta, &a, &mut stream(5, &[])).unwrap();
        let ub = privatize_update("u", 1, &delta, &b, &mut stream(6, &[])).unwrap();
        assert_eq!(ua.delta, ub.delta);
    }

    #[test]
    fn unit_budget_noise_has_variance_two() {
        let cfg = PrivacyConfig::with_epsilon(Epsilon::Finite(1.0), 1.0);
        let zero = ParameterSet::flat(vec![0.0; 10]);
        let mut rng = stream(7, &[]);
        let mut pooled = Vec::with_capacity(1_000_000);
        for _ in 0..100_000 {
            pooled.extend_from_slice(
                privatize_update("u", 1, &zero, &cfg, &mut rng)
                    .unwrap()
                    .delta
                    .values(),
            );
        }
        let (_, var) = moments(&pooled);
        assert!((var - 2.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn large_budget_noise_is_tiny() {
        let cfg = PrivacyConfig::with_epsilon(Epsilon::Finite(1000.0), 1.0);
        let zero = ParameterSet::flat(vec![0.0; 1000]);
        let out = privatize_update("u", 1, &zero, &cfg, &mut stream(8, &[])).unwrap();
        // P(|X| > 0.05) = exp(-50) at b = 0.001
        assert!(out.delta.values().iter().all(|v| v.abs() <= 0.05));
    }

    #[test]
    fn epsilon_parsing() {
        assert_eq!("off".parse::<Epsilon>().unwrap(), Epsilon::Off);
        assert_eq!("OFF".parse::<Epsilon>().unwrap(), Epsilon::Off);
        assert_eq!("0.5".parse::<Epsilon>().unwrap(), Epsilon::Finite(0.5));
        assert!("0".parse::<Epsilon>().is_err());
        assert!("inf".parse::<Epsilon>().is_err());
        assert!("x".parse::<Epsilon>().is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = PrivacyConfig::with_epsilon(Epsilon::Off, 0.5);
        let text = toml::to_string(&cfg).unwrap();
        assert!(text.contains("\"off\""));
        assert_eq!(toml::from_str::<PrivacyConfig>(&text).unwrap(), cfg);
        let parsed: PrivacyConfig = toml::from_str("epsilon = 0.5\nclip_norm = 2.0").unwrap();
        assert_eq!(parsed.noise_scale(), 4.0);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(PrivacyConfig::with_epsilon(Epsilon::Finite(1.0), 0.0)
            .validate()
            .is_err());
        assert!(
            PrivacyConfig::with_epsilon(Epsilon::Finite(1.0), f64::INFINITY)
                .validate()
                .is_err()
        );
        assert!(PrivacyConfig::disabled(f64::INFINITY).validate().is_ok());
        assert!(toml::from_str::<PrivacyConfig>("epsilon = -1.0").is_err());
    }

    proptest! {
        #[test]
        fn noise_scale_is_monotone(e in 0.01f64..100.0, c in 0.01f64..100.0, k in 1.01f64..10.0) {
            let base = PrivacyConfig::with_epsilon(Epsilon::Finite(e), c).noise_scale();
            prop_assert!(PrivacyConfig::with_epsilon(Epsilon::Finite(e * k), c).noise_scale() < base);
            prop_assert!(PrivacyConfig::with_epsilon(Epsilon::Finite(e), c * k).noise_scale() > base);
        }

        #[test]
        fn pre_noise_delta_respects_clip(values in prop::collection::vec(-100.0f64..100.0, 1..50), c in 0.001f64..10.0) {
            let cfg = PrivacyConfig::disabled(c);
            let out = privatize_update("u", 1, &ParameterSet::flat(values), &cfg, &mut stream(0, &[])).unwrap();
            prop_assert!(out.delta.l2_norm() <= c + 1e-9);
        }
    }
}
