//! Learning agents: a double DQN for discrete control and a DDPG
//! actor-critic for continuous control, plus the hyperparameter presets the
//! experiments run with.

pub mod ddpg;
pub mod ddqn;

pub use ddpg::{BranchedCritic, DdpgAgent, DeterministicDdpg};
pub use ddqn::{ddqn_target, DdqnAgent, GreedyDdqn};

use thiserror::Error;

use crate::envs::EnvKind;

/// Exploration (epsilon or noise scale) never decays below this.
pub const EXPLORATION_FLOOR: f64 = 0.01;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("not enough experience to train: have {have}, need {need}")]
    InsufficientData { have: usize, need: usize },
    #[error("invalid hyperparameters: {0}")]
    BadHyperparameters(String),
    #[error("this agent requires an actor learning rate")]
    MissingActorLr,
    #[error("replayed action does not fit this agent's action space")]
    WrongActionType,
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
}

/// Everything tunable about a training run. `exploration_steps` is the
/// warm-up length: exploration stays maximal while the first
/// `exploration_steps` environment steps fill the buffer, then decays by
/// `exploration_factor` once per step, and training begins once the buffer
/// holds `max(batch_size, exploration_steps)` transitions — one gradient
/// step per environment step from there on.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    pub critic_lr: f64,
    pub actor_lr: Option<f64>,
    pub target_rate: f64,
    pub gamma: f64,
    pub exploration_steps: usize,
    pub exploration_factor: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
}

impl Hyperparameters {
    pub fn cartpole() -> Self {
        Self {
            critic_lr: 0.0005,
            actor_lr: None,
            target_rate: 0.001,
            gamma: 0.99,
            exploration_steps: 2000,
            exploration_factor: 0.995,
            batch_size: 128,
            buffer_capacity: 50_000,
        }
    }

    pub fn lanekeep() -> Self {
        Self {
            critic_lr: 0.0005,
            actor_lr: Some(0.0003),
            target_rate: 0.001,
            gamma: 0.99,
            exploration_steps: 2000,
            exploration_factor: 0.999,
            batch_size: 128,
            buffer_capacity: 100_000,
        }
    }

    pub fn flappybird() -> Self {
        Self {
            critic_lr: 0.000005,
            actor_lr: None,
            target_rate: 0.001,
            gamma: 0.99,
            exploration_steps: 30_000,
            exploration_factor: 0.99985,
            batch_size: 128,
            buffer_capacity: 50_000,
        }
    }

    pub fn for_env(kind: EnvKind) -> Self {
        match kind {
            EnvKind::CartPole => Self::cartpole(),
            EnvKind::LaneKeep => Self::lanekeep(),
            EnvKind::FlappyBird => Self::flappybird(),
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |msg: String| Err(AgentError::BadHyperparameters(msg));
        if !(self.critic_lr > 0.0 && self.critic_lr.is_finite()) {
            return bad(format!("critic_lr must be positive, got {}", self.critic_lr));
        }
        if let Some(lr) = self.actor_lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("actor_lr must be positive, got {lr}"));
            }
        }
        if !(self.target_rate > 0.0 && self.target_rate <= 1.0) {
            return bad(format!(
                "target_rate must lie in (0, 1], got {}",
                self.target_rate
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) || self.gamma.is_nan() {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.exploration_factor > 0.0 && self.exploration_factor <= 1.0) {
            return bad(format!(
                "exploration_factor must lie in (0, 1], got {}",
                self.exploration_factor
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.buffer_capacity < self.batch_size {
            return bad(format!(
                "buffer_capacity {} is smaller than batch_size {}",
                self.buffer_capacity, self.batch_size
            ));
        }
        if self.exploration_steps > self.buffer_capacity {
            return bad(format!(
                "exploration_steps {} exceeds buffer_capacity {}; training would never start",
                self.exploration_steps, self.buffer_capacity
            ));
        }
        Ok(())
    }

    /// Buffer fill level at which training starts.
    pub fn train_threshold(&self) -> usize {
        self.batch_size.max(self.exploration_steps)
    }
}

/// Applies per-feature divisors to a raw state vector.
pub(crate) fn scale_features(values: &[f64], scale: &[f64]) -> Vec<f64> {
    debug_assert_eq!(values.len(), scale.len());
    values.iter().zip(scale).map(|(v, s)| v / s).collect()
}
