//! Training configuration: defaults, validation, the four published MARPO
//! presets, and a plain `key = value` on-disk format with exact round-trip.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::losses::PairAdvantage;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown algorithm {0:?} (expected marpo or mappo)")]
    UnknownAlgorithm(String),
    #[error("unknown preset {0:?} (expected marpo1..marpo4)")]
    UnknownPreset(String),
    #[error("invalid value for {key}: {value:?}")]
    InvalidValue { key: String, value: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("malformed config line {0:?}")]
    MalformedLine(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Marpo,
    Mappo,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Marpo => "marpo",
            Algorithm::Mappo => "mappo",
        })
    }
}

impl FromStr for Algorithm {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "marpo" => Ok(Algorithm::Marpo),
            "mappo" => Ok(Algorithm::Mappo),
            other => Err(ConfigError::UnknownAlgorithm(other.to_string())),
        }
    }
}

/// Complete description of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub env_name: String,
    pub iterations: usize,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub rollout_steps: usize,
    pub alpha: f64,
    pub sigma: f64,
    pub beta: f64,
    pub kl_bias: f64,
    pub baseline_epsilon: f64,
    pub learning_rate: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub seed: u64,
    pub eval_episodes: usize,
    pub eval_interval: usize,
    pub normalize_advantages: bool,
    pub literal_pair_advantage: bool,
    /// When set, use fixed symmetric bounds `(1 - eps, 1 + eps)` instead of
    /// the KL-derived dynamic bounds (MAPPO always behaves this way).
    pub fixed_clip: Option<f64>,
    /// Optional scale on the KL target used for the second (k+1) bounds of
    /// the reflective term; `None` reuses the same bounds.
    pub second_kl_scale: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Marpo,
            env_name: String::new(),
            iterations: 50,
            epochs: 5,
            minibatch_size: 256,
            rollout_steps: 512,
            alpha: 0.5,
            sigma: 0.01,
            beta: 0.9,
            kl_bias: 0.05,
            baseline_epsilon: 0.2,
            learning_rate: 3e-4,
            gamma: 0.99,
            lambda: 0.95,
            seed: 0,
            eval_episodes: 32,
            eval_interval: 1,
            normalize_advantages: true,
            literal_pair_advantage: false,
            fixed_clip: None,
            second_kl_scale: None,
        }
    }
}

impl TrainConfig {
    /// The four published hyperparameter presets
    /// (KL bias, EMA update rate beta).
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let (kl_bias, beta) = match name {
            "marpo1" => (0.05, 0.05),
            "marpo2" => (0.08, 0.08),
            "marpo3" => (0.10, 0.08),
            "marpo4" => (0.10, 0.01),
            other => return Err(ConfigError::UnknownPreset(other.to_string())),
        };
        Ok(Self { kl_bias, beta, ..Self::default() })
    }

    pub fn pair_advantage(&self) -> PairAdvantage {
        if self.literal_pair_advantage {
            PairAdvantage::LiteralCurrent
        } else {
            PairAdvantage::NextStep
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.env_name.is_empty() {
            return fail("env_name must be set".into());
        }
        if self.iterations == 0 || self.epochs == 0 {
            return fail("iterations and epochs must be positive".into());
        }
        if self.minibatch_size == 0 || self.rollout_steps == 0 {
            return fail("minibatch_size and rollout_steps must be positive".into());
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return fail(format!("alpha must be non-negative, got {}", self.alpha));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return fail(format!("sigma must be non-negative, got {}", self.sigma));
        }
        if !(self.beta >= 0.0 && self.beta < 1.0) {
            return fail(format!("beta must lie in [0, 1), got {}", self.beta));
        }
        if !(self.kl_bias > 0.0) || !self.kl_bias.is_finite() {
            return fail(format!("kl_bias must be positive, got {}", self.kl_bias));
        }
        if !(self.baseline_epsilon > 0.0 && self.baseline_epsilon < 1.0) {
            return fail(format!(
                "baseline_epsilon must lie in (0, 1), got {}",
                self.baseline_epsilon
            ));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return fail(format!("learning_rate must be non-negative, got {}", self.learning_rate));
        }
        if !(self.gamma >= 0.0 && self.gamma <= 1.0) {
            return fail(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.lambda >= 0.0 && self.lambda <= 1.0) {
            return fail(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if self.eval_episodes == 0 || self.eval_interval == 0 {
            return fail("eval_episodes and eval_interval must be positive".into());
        }
        if let Some(eps) = self.fixed_clip {
            if !(eps > 0.0 && eps < 1.0) {
                return fail(format!("fixed_clip must lie in (0, 1), got {eps}"));
            }
        }
        if let Some(s) = self.second_kl_scale {
            if !(s > 0.0) || !s.is_finite() {
                return fail(format!("second_kl_scale must be positive, got {s}"));
            }
        }
        Ok(())
    }

    /// Serializes as `key = value` lines; floats use hex-exact round-trip
    /// notation via `{:?}` formatting of f64, options as `none`.
    pub fn serialize(&self) -> String {
        let opt = |v: Option<f64>| match v {
            None => "none".to_string(),
            Some(x) => format!("{x:?}"),
        };
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        line("algorithm", self.algorithm.to_string());
        line("env_name", self.env_name.clone());
        line("iterations", self.iterations.to_string());
        line("epochs", self.epochs.to_string());
        line("minibatch_size", self.minibatch_size.to_string());
        line("rollout_steps", self.rollout_steps.to_string());
        line("alpha", format!("{:?}", self.alpha));
        line("sigma", format!("{:?}", self.sigma));
        line("beta", format!("{:?}", self.beta));
        line("kl_bias", format!("{:?}", self.kl_bias));
        line("baseline_epsilon", format!("{:?}", self.baseline_epsilon));
        line("learning_rate", format!("{:?}", self.learning_rate));
        line("gamma", format!("{:?}", self.gamma));
        line("lambda", format!("{:?}", self.lambda));
        line("seed", self.seed.to_string());
        line("eval_episodes", self.eval_episodes.to_string());
        line("eval_interval", self.eval_interval.to_string());
        line("normalize_advantages", self.normalize_advantages.to_string());
        line("literal_pair_advantage", self.literal_pair_advantage.to_string());
        line("fixed_clip", opt(self.fixed_clip));
        line("second_kl_scale", opt(self.second_kl_scale));
        s
    }

    /// Parses the `key = value` format produced by [`serialize`]; keys may
    /// appear in any order, blank lines and `#` comments are skipped, and
    /// omitted keys keep their defaults.
    ///
    /// [`serialize`]: TrainConfig::serialize
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for raw in text.lines() {
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| ConfigError::MalformedLine(raw.to_string()))?;
            let key = key.trim();
            let value = value.trim();
            cfg.set_key(key, value)?;
        }
        Ok(cfg)
    }

    /// Applies a single `key`/`value` assignment (shared by the file parser
    /// and CLI overrides).
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::InvalidValue { key: key.to_string(), value: value.to_string() };
        let parse_f64 = |v: &str| v.parse::<f64>().map_err(|_| bad());
        let parse_usize = |v: &str| v.parse::<usize>().map_err(|_| bad());
        let parse_bool = |v: &str| v.parse::<bool>().map_err(|_| bad());
        let parse_opt = |v: &str| -> Result<Option<f64>, ConfigError> {
            if v == "none" {
                Ok(None)
            } else {
                Ok(Some(v.parse::<f64>().map_err(|_| bad())?))
            }
        };
        match key {
            "algorithm" => self.algorithm = value.parse()?,
            "env_name" => self.env_name = value.to_string(),
            "iterations" => self.iterations = parse_usize(value)?,
            "epochs" => self.epochs = parse_usize(value)?,
            "minibatch_size" => self.minibatch_size = parse_usize(value)?,
            "rollout_steps" => self.rollout_steps = parse_usize(value)?,
            "alpha" => self.alpha = parse_f64(value)?,
            "sigma" => self.sigma = parse_f64(value)?,
            "beta" => self.beta = parse_f64(value)?,
            "kl_bias" => self.kl_bias = parse_f64(value)?,
            "baseline_epsilon" => self.baseline_epsilon = parse_f64(value)?,
            "learning_rate" => self.learning_rate = parse_f64(value)?,
            "gamma" => self.gamma = parse_f64(value)?,
            "lambda" => self.lambda = parse_f64(value)?,
            "seed" => self.seed = value.parse::<u64>().map_err(|_| bad())?,
            "eval_episodes" => self.eval_episodes = parse_usize(value)?,
            "eval_interval" => self.eval_interval = parse_usize(value)?,
            "normalize_advantages" => self.normalize_advantages = parse_bool(value)?,
            "literal_pair_advantage" => self.literal_pair_advantage = parse_bool(value)?,
            "fixed_clip" => self.fixed_clip = parse_opt(value)?,
            "second_kl_scale" => self.second_kl_scale = parse_opt(value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_need_env_name() {
        let cfg = TrainConfig::default();
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig { env_name: "matrix".into(), ..TrainConfig::default() };
        cfg.validate().unwrap();
    }

    #[test]
    fn presets() {
        let p1 = TrainConfig::preset("marpo1").unwrap();
        assert_eq!((p1.kl_bias, p1.beta), (0.05, 0.05));
        let p2 = TrainConfig::preset("marpo2").unwrap();
        assert_eq!((p2.kl_bias, p2.beta), (0.08, 0.08));
        let p3 = TrainConfig::preset("marpo3").unwrap();
        assert_eq!((p3.kl_bias, p3.beta), (0.10, 0.08));
        let p4 = TrainConfig::preset("marpo4").unwrap();
        assert_eq!((p4.kl_bias, p4.beta), (0.10, 0.01));
        assert!(TrainConfig::preset("marpo5").is_err());
    }

    #[test]
    fn serialize_parse_round_trip() {
        let mut cfg = TrainConfig::preset("marpo3").unwrap();
        cfg.env_name = "commit2".into();
        cfg.seed = 42;
        cfg.learning_rate = 1e-3;
        cfg.fixed_clip = Some(0.2);
        cfg.second_kl_scale = None;
        cfg.literal_pair_advantage = true;
        let text = cfg.serialize();
        let back = TrainConfig::parse(&text).unwrap();
        assert_eq!(cfg, back);
        // a second round trip is byte-identical
        assert_eq!(text, back.serialize());
    }

    #[test]
    fn parse_tolerates_comments_and_rejects_junk() {
        let cfg = TrainConfig::parse("# comment\n\nenv_name = matrix\nseed = 7\n").unwrap();
        assert_eq!(cfg.env_name, "matrix");
        assert_eq!(cfg.seed, 7);
        assert!(TrainConfig::parse("nonsense").is_err());
        assert!(TrainConfig::parse("mystery = 1").is_err());
        assert!(TrainConfig::parse("alpha = cow").is_err());
        assert!(TrainConfig::parse("algorithm = ddpg").is_err());
    }

    #[test]
    fn validation_bounds() {
        let base = TrainConfig { env_name: "matrix".into(), ..TrainConfig::default() };
        let cases: Vec<TrainConfig> = vec![
            TrainConfig { iterations: 0, ..base.clone() },
            TrainConfig { alpha: -1.0, ..base.clone() },
            TrainConfig { beta: 1.5, ..base.clone() },
            TrainConfig { kl_bias: 0.0, ..base.clone() },
            TrainConfig { baseline_epsilon: 1.0, ..base.clone() },
            TrainConfig { gamma: -0.1, ..base.clone() },
            TrainConfig { lambda: 2.0, ..base.clone() },
            TrainConfig { fixed_clip: Some(0.0), ..base.clone() },
            TrainConfig { second_kl_scale: Some(-1.0), ..base.clone() },
        ];
        for bad in cases {
            assert!(bad.validate().is_err(), "{bad:?} should fail validation");
        }
    }
}
