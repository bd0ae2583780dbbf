//! Experiment configuration: per-environment defaults, a flat
//! `key = value` config-file format, and the override mechanism the CLI
//! exposes as `--hp.<name>` flags.

use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::agents::Hyperparameters;
use crate::envs::EnvKind;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: expected 'key = value', got '{text}'")]
    Malformed { line: usize, text: String },
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("bad value for '{key}': {reason}")]
    BadValue { key: String, reason: String },
    #[error("config never sets 'env'")]
    MissingEnv,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What sits between the policy and the environment during training and
/// evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShieldMode {
    /// Proposals reach the environment unmodified.
    None,
    /// The declarative non-permissibility shield with backup substitution.
    Unp,
    /// Depth-limited model-based lookahead.
    Mbs,
}

impl ShieldMode {
    pub fn name(&self) -> &'static str {
        match self {
            ShieldMode::None => "none",
            ShieldMode::Unp => "unp",
            ShieldMode::Mbs => "mbs",
        }
    }
}

impl std::fmt::Display for ShieldMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShieldMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(ShieldMode::None),
            "unp" => Ok(ShieldMode::Unp),
            "mbs" => Ok(ShieldMode::Mbs),
            other => Err(format!(
                "unknown shield mode '{other}' (expected none, unp, or mbs)"
            )),
        }
    }
}

/// Everything one experiment needs: the task, the shield, the seeds to
/// sweep, the learner's hyperparameters, and the convergence rule that may
/// end a run early.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    pub shield_mode: ShieldMode,
    pub seeds: Vec<u64>,
    /// Hard cap on training episodes per seed.
    pub max_episodes: usize,
    pub hp: Hyperparameters,
    /// A run counts as converged once the trailing-window mean episode
    /// reward reaches this value.
    pub convergence_threshold: f64,
    pub convergence_window: usize,
    /// Stop a run at the episode where it first converges.
    pub stop_on_convergence: bool,
}

impl ExperimentConfig {
    /// The stock configuration for an environment: its hyperparameter
    /// preset, the shield on, and a convergence threshold equal to the
    /// task's full-success episode reward.
    pub fn for_env(env: EnvKind) -> Self {
        let (convergence_threshold, max_episodes) = match env {
            EnvKind::CartPole => (200.0, 500),
            EnvKind::LaneKeep => (0.0, 100),
            EnvKind::FlappyBird => (200.0, 2000),
        };
        Self {
            env,
            shield_mode: ShieldMode::Unp,
            seeds: vec![1234],
            max_episodes,
            hp: Hyperparameters::for_env(env),
            convergence_threshold,
            convergence_window: 10,
            stop_on_convergence: true,
        }
    }

    /// Parses a flat `key = value` file. `#` starts a comment, blank lines
    /// are skipped, and the `env` key picks the defaults every other key
    /// then overrides; see [`ExperimentConfig::apply_override`] for the key
    /// set.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Malformed {
                    line: i + 1,
                    text: raw.trim().to_string(),
                });
            };
            pairs.push((key.trim().to_string(), value.trim().to_string()));
        }
        let env_value = pairs
            .iter()
            .find(|(key, _)| key == "env")
            .ok_or(ConfigError::MissingEnv)?;
        let env: EnvKind = parse_value("env", &env_value.1)?;
        let mut config = Self::for_env(env);
        for (key, value) in &pairs {
            if key != "env" {
                config.apply_override(key, value)?;
            }
        }
        Ok(config)
    }

    /// Applies one `key = value` override. Accepted keys: `shield`,
    /// `seeds` (comma-separated), `episodes`, `convergence_threshold`,
    /// `convergence_window`, `stop_on_convergence`, and the `hp.*` family
    /// (`critic_lr`, `actor_lr`, `target_rate`, `gamma`,
    /// `exploration_steps`, `exploration_factor`, `batch_size`,
    /// `buffer_capacity`).
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "env" => {
                return Err(ConfigError::BadValue {
                    key: key.to_string(),
                    reason: "the environment fixes the defaults and cannot be overridden".into(),
                })
            }
            "shield" => self.shield_mode = parse_value(key, value)?,
            "seeds" => self.seeds = parse_seeds(value)?,
            "episodes" => self.max_episodes = parse_value(key, value)?,
            "convergence_threshold" => self.convergence_threshold = parse_value(key, value)?,
            "convergence_window" => self.convergence_window = parse_value(key, value)?,
            "stop_on_convergence" => self.stop_on_convergence = parse_value(key, value)?,
            "hp.critic_lr" => self.hp.critic_lr = parse_value(key, value)?,
            "hp.actor_lr" => self.hp.actor_lr = Some(parse_value(key, value)?),
            "hp.target_rate" => self.hp.target_rate = parse_value(key, value)?,
            "hp.gamma" => self.hp.gamma = parse_value(key, value)?,
            "hp.exploration_steps" => self.hp.exploration_steps = parse_value(key, value)?,
            "hp.exploration_factor" => self.hp.exploration_factor = parse_value(key, value)?,
            "hp.batch_size" => self.hp.batch_size = parse_value(key, value)?,
            "hp.buffer_capacity" => self.hp.buffer_capacity = parse_value(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::BadValue {
                key: "seeds".into(),
                reason: "at least one seed is required".into(),
            });
        }
        if self.max_episodes == 0 {
            return Err(ConfigError::BadValue {
                key: "episodes".into(),
                reason: "must be at least 1".into(),
            });
        }
        if self.convergence_window == 0 {
            return Err(ConfigError::BadValue {
                key: "convergence_window".into(),
                reason: "must be at least 1".into(),
            });
        }
        if !self.convergence_threshold.is_finite() {
            return Err(ConfigError::BadValue {
                key: "convergence_threshold".into(),
                reason: "must be finite".into(),
            });
        }
        self.hp.validate().map_err(|e| ConfigError::BadValue {
            key: "hp".into(),
            reason: e.to_string(),
        })?;
        if self.env == EnvKind::LaneKeep && self.hp.actor_lr.is_none() {
            return Err(ConfigError::BadValue {
                key: "hp.actor_lr".into(),
                reason: "the continuous-control learner needs an actor learning rate".into(),
            });
        }
        Ok(())
    }
}

fn parse_value<T>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        reason: format!("'{value}': {e}"),
    })
}

fn parse_seeds(value: &str) -> Result<Vec<u64>, ConfigError> {
    value
        .split(',')
        .map(|s| parse_value("seeds", s.trim()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_carry_the_task_success_thresholds() {
        let cp = ExperimentConfig::for_env(EnvKind::CartPole);
        assert_eq!(cp.convergence_threshold, 200.0);
        let lk = ExperimentConfig::for_env(EnvKind::LaneKeep);
        assert_eq!(lk.convergence_threshold, 0.0);
        let fb = ExperimentConfig::for_env(EnvKind::FlappyBird);
        assert_eq!(fb.convergence_threshold, 200.0);
        for cfg in [&cp, &lk, &fb] {
            assert_eq!(cfg.shield_mode, ShieldMode::Unp);
            assert_eq!(cfg.convergence_window, 10);
            assert!(cfg.stop_on_convergence);
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn shield_mode_round_trips_through_strings() {
        for mode in [ShieldMode::None, ShieldMode::Unp, ShieldMode::Mbs] {
            assert_eq!(mode.name().parse::<ShieldMode>().unwrap(), mode);
        }
        assert!("hard".parse::<ShieldMode>().is_err());
    }

    #[test]
    fn parses_a_full_file_with_comments_and_overrides() {
        let text = "\
# experiment: shielded cart-pole sweep
env = cartpole
shield = none
seeds = 1, 2, 3   # three repetitions
episodes = 42

convergence_threshold = 150.5
convergence_window = 5
stop_on_convergence = false
hp.critic_lr = 0.25
hp.gamma = 0.9
hp.batch_size = 16
";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.env, EnvKind::CartPole);
        assert_eq!(cfg.shield_mode, ShieldMode::None);
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
        assert_eq!(cfg.max_episodes, 42);
        assert_eq!(cfg.convergence_threshold, 150.5);
        assert_eq!(cfg.convergence_window, 5);
        assert!(!cfg.stop_on_convergence);
        assert_eq!(cfg.hp.critic_lr, 0.25);
        assert_eq!(cfg.hp.gamma, 0.9);
        assert_eq!(cfg.hp.batch_size, 16);
        // Untouched keys keep the preset.
        assert_eq!(
            cfg.hp.buffer_capacity,
            Hyperparameters::for_env(EnvKind::CartPole).buffer_capacity
        );
    }

    #[test]
    fn env_key_position_does_not_matter() {
        let cfg = ExperimentConfig::parse("episodes = 7\nenv = lanekeep\n").unwrap();
        assert_eq!(cfg.env, EnvKind::LaneKeep);
        assert_eq!(cfg.max_episodes, 7);
    }

    #[test]
    fn missing_env_is_rejected() {
        assert!(matches!(
            ExperimentConfig::parse("episodes = 7\n"),
            Err(ConfigError::MissingEnv)
        ));
    }

    #[test]
    fn malformed_lines_report_their_number() {
        let err = ExperimentConfig::parse("env = cartpole\nwhat is this\n").unwrap_err();
        match err {
            ConfigError::Malformed { line, text } => {
                assert_eq!(line, 2);
                assert_eq!(text, "what is this");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(
            ExperimentConfig::parse("env = cartpole\nlr = 3\n"),
            Err(ConfigError::UnknownKey(k)) if k == "lr"
        ));
        assert!(matches!(
            ExperimentConfig::parse("env = cartpole\nepisodes = many\n"),
            Err(ConfigError::BadValue { key, .. }) if key == "episodes"
        ));
        assert!(matches!(
            ExperimentConfig::parse("env = mariokart\n"),
            Err(ConfigError::BadValue { key, .. }) if key == "env"
        ));
    }

    #[test]
    fn env_cannot_be_overridden_after_the_fact() {
        let mut cfg = ExperimentConfig::for_env(EnvKind::CartPole);
        assert!(cfg.apply_override("env", "lanekeep").is_err());
    }

    #[test]
    fn validation_catches_inconsistent_configs() {
        let mut cfg = ExperimentConfig::for_env(EnvKind::CartPole);
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::for_env(EnvKind::CartPole);
        cfg.max_episodes = 0;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::for_env(EnvKind::CartPole);
        cfg.convergence_window = 0;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::for_env(EnvKind::LaneKeep);
        cfg.hp.actor_lr = None;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::for_env(EnvKind::CartPole);
        cfg.hp.gamma = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn seed_lists_tolerate_spaces_and_reject_garbage() {
        assert_eq!(parse_seeds("4").unwrap(), vec![4]);
        assert_eq!(parse_seeds(" 9 , 10 ,11").unwrap(), vec![9, 10, 11]);
        assert!(parse_seeds("1, two").is_err());
    }
}
