//! Core MDP vocabulary shared by every other module: named feature states,
//! action spaces, transitions, the environment and policy traits, and the
//! episode loop that ties them together.

use rand::RngCore;
use thiserror::Error;

use crate::shield::{ShieldError, UnpSpec};

/// Errors surfaced by environments when stepped or teleported incorrectly.
#[derive(Debug, Error)]
pub enum EnvError {
    #[error("cannot step a terminal environment; call reset first")]
    SteppedTerminal,
    #[error("action {got} is invalid for this environment: {reason}")]
    InvalidAction { got: String, reason: String },
    #[error("state rejected by set_state: {reason}")]
    InvalidState { reason: String },
}

/// Errors from the episode loop and return computation.
#[derive(Debug, Error)]
pub enum MdpError {
    #[error("max_steps must be at least 1")]
    ZeroMaxSteps,
    #[error("discounted_return requires a non-empty reward sequence")]
    EmptyRewards,
    #[error("gamma must lie in [0, 1], got {got}")]
    InvalidGamma { got: f64 },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Shield(#[from] ShieldError),
}

/// A dense feature vector with stable, human-readable feature names.
///
/// The names double as CSV column headers, so every environment exposes its
/// state layout once as a `&'static` slice and all downstream tooling agrees
/// on ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureState {
    values: Vec<f64>,
    names: &'static [&'static str],
}

impl FeatureState {
    /// Builds a state, panicking on malformed inputs (length mismatch or
    /// non-finite entries). States are constructed by environments, so a
    /// violation here is a programming error rather than a runtime condition.
    pub fn new(values: Vec<f64>, names: &'static [&'static str]) -> Self {
        assert_eq!(
            values.len(),
            names.len(),
            "feature vector has {} entries but {} names",
            values.len(),
            names.len()
        );
        assert!(
            values.iter().all(|v| v.is_finite()),
            "feature vector contains a non-finite entry: {values:?}"
        );
        Self { values, names }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn names(&self) -> &'static [&'static str] {
        self.names
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Looks a feature up by name. Intended for readable predicates and
    /// tests; hot paths index `values()` directly.
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| *n == name)
            .map(|i| self.values[i])
    }
}

/// The set an action is drawn from: a small discrete set indexed from zero,
/// or a closed interval of the real line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionSpace {
    Discrete { count: usize },
    Continuous { low: f64, high: f64 },
}

impl ActionSpace {
    pub fn contains(&self, action: &ActionValue) -> bool {
        match (self, action) {
            (ActionSpace::Discrete { count }, ActionValue::Discrete(i)) => i < count,
            (ActionSpace::Continuous { low, high }, ActionValue::Continuous(a)) => {
                a.is_finite() && *low <= *a && *a <= *high
            }
            _ => false,
        }
    }

    /// Draws a uniform random action, the exploration primitive shared by
    /// every agent.
    pub fn sample_uniform(&self, rng: &mut dyn RngCore) -> ActionValue {
        match self {
            ActionSpace::Discrete { count } => {
                ActionValue::Discrete(rand::Rng::random_range(rng, 0..*count))
            }
            ActionSpace::Continuous { low, high } => {
                ActionValue::Continuous(rand::Rng::random_range(rng, *low..=*high))
            }
        }
    }
}

/// A single concrete action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionValue {
    Discrete(usize),
    Continuous(f64),
}

impl ActionValue {
    pub fn index(&self) -> Option<usize> {
        match self {
            ActionValue::Discrete(i) => Some(*i),
            ActionValue::Continuous(_) => None,
        }
    }

    pub fn scalar(&self) -> Option<f64> {
        match self {
            ActionValue::Discrete(_) => None,
            ActionValue::Continuous(a) => Some(*a),
        }
    }

    /// Numeric rendering used in CSV traces: the index for discrete actions,
    /// the raw value for continuous ones.
    pub fn as_f64(&self) -> f64 {
        match self {
            ActionValue::Discrete(i) => *i as f64,
            ActionValue::Continuous(a) => *a,
        }
    }
}

impl std::fmt::Display for ActionValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ActionValue::Discrete(i) => write!(f, "{i}"),
            ActionValue::Continuous(a) => write!(f, "{a}"),
        }
    }
}

/// One environment step: the state the action was taken in, the action as
/// executed, and the outcome. `failure` marks safety violations; it implies
/// `terminal` but not the reverse (an episode can also end successfully).
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: FeatureState,
    pub action: ActionValue,
    pub reward: f64,
    pub next_state: FeatureState,
    pub terminal: bool,
    pub failure: bool,
}

impl Transition {
    pub fn new(
        state: FeatureState,
        action: ActionValue,
        reward: f64,
        next_state: FeatureState,
        terminal: bool,
        failure: bool,
    ) -> Self {
        assert!(!failure || terminal, "a failure transition must be terminal");
        Self {
            state,
            action,
            reward,
            next_state,
            terminal,
            failure,
        }
    }
}

/// Everything observed during one episode, aligned per step: `interventions`
/// and `unsafe_executed` have one entry per transition. `unsafe_executed`
/// records whether the action actually sent to the environment was
/// non-permissible under the environment's own rules, independent of whether
/// a shield was active — it is the audit trail for safety claims.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeLog {
    pub transitions: Vec<Transition>,
    pub interventions: Vec<bool>,
    pub unsafe_executed: Vec<bool>,
    pub episode_reward: f64,
}

impl EpisodeLog {
    pub fn push(&mut self, transition: Transition, intervened: bool, unsafe_executed: bool) {
        self.episode_reward += transition.reward;
        self.transitions.push(transition);
        self.interventions.push(intervened);
        self.unsafe_executed.push(unsafe_executed);
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn unsafe_count(&self) -> u64 {
        self.unsafe_executed.iter().filter(|u| **u).count() as u64
    }

    pub fn intervention_count(&self) -> u64 {
        self.interventions.iter().filter(|i| **i).count() as u64
    }
}

/// An interactive environment with deterministic dynamics. All randomness
/// (initial states, pipe placements, ...) comes from an owned seeded
/// generator, so two instances built from identical seeds behave bitwise
/// identically.
pub trait Environment {
    /// Starts a fresh episode and returns the initial state.
    fn reset(&mut self) -> FeatureState;

    /// The current state without advancing the simulation.
    fn current_state(&self) -> FeatureState;

    /// Whether the current state is terminal (stepping it is an error).
    fn is_terminal(&self) -> bool;

    /// Applies an action and advances one step.
    fn step(&mut self, action: &ActionValue) -> Result<Transition, EnvError>;

    fn action_space(&self) -> ActionSpace;

    /// The non-permissibility rules shipped with this environment.
    fn unp_spec(&self) -> &UnpSpec;

    /// The backup rule paired with `unp_spec` for shield construction.
    fn backup_policy(&self) -> crate::shield::BackupPolicy;

    /// Smallest reward the environment can emit; failure steps must pay
    /// exactly this.
    fn min_reward(&self) -> f64;

    /// Teleports the environment to an arbitrary state (resetting step
    /// counters), used by model-based lookahead and validation probes.
    fn set_state(&mut self, state: &FeatureState) -> Result<(), EnvError>;

    /// An independent copy for simulation; the clone shares no state with
    /// the original.
    fn clone_env(&self) -> Box<dyn Environment>;
}

/// Anything that proposes actions: trained agents, random baselines, or
/// scripted controllers. `observe` gives learners the executed transition
/// after each step; non-learning sources keep the default no-op.
pub trait ActionSource {
    fn select(&mut self, state: &FeatureState, rng: &mut dyn RngCore) -> ActionValue;

    fn observe(&mut self, _transition: &Transition, _rng: &mut dyn RngCore) {}
}

/// A runtime action filter sitting between policy and environment. The
/// filter queries the policy itself so that it can substitute a different
/// action before anything touches the environment; the returned flag says
/// whether a substitution happened. The environment reference supports
/// simulation-based filters and is never mutated.
pub trait ActionFilter {
    fn shield_action(
        &mut self,
        policy: &mut dyn ActionSource,
        state: &FeatureState,
        env: &dyn Environment,
        rng: &mut dyn RngCore,
    ) -> Result<(ActionValue, bool), ShieldError>;
}

/// Uniform random behaviour over a fixed action space.
pub struct RandomPolicy {
    space: ActionSpace,
}

impl RandomPolicy {
    pub fn new(space: ActionSpace) -> Self {
        Self { space }
    }
}

impl ActionSource for RandomPolicy {
    fn select(&mut self, _state: &FeatureState, rng: &mut dyn RngCore) -> ActionValue {
        self.space.sample_uniform(rng)
    }
}

/// Always plays the same action; handy for tests and validation sweeps.
pub struct ConstantPolicy {
    action: ActionValue,
}

impl ConstantPolicy {
    pub fn new(action: ActionValue) -> Self {
        Self { action }
    }
}

impl ActionSource for ConstantPolicy {
    fn select(&mut self, _state: &FeatureState, _rng: &mut dyn RngCore) -> ActionValue {
        self.action
    }
}

/// Runs one episode: reset, then repeatedly select (optionally filtered),
/// step, and let the actor observe, until a terminal transition or
/// `max_steps` transitions have been recorded.
///
/// The log's `unsafe_executed` entries are audited against the
/// environment's own rules for the action actually executed, shield or not.
pub fn run_episode(
    env: &mut dyn Environment,
    actor: &mut dyn ActionSource,
    mut filter: Option<&mut (dyn ActionFilter + '_)>,
    max_steps: usize,
    rng: &mut dyn RngCore,
) -> Result<EpisodeLog, MdpError> {
    if max_steps == 0 {
        return Err(MdpError::ZeroMaxSteps);
    }

    let mut state = env.reset();
    let mut log = EpisodeLog::default();

    for _ in 0..max_steps {
        let (action, intervened) = match filter.as_deref_mut() {
            Some(f) => f.shield_action(actor, &state, &*env, rng)?,
            None => (actor.select(&state, rng), false),
        };
        let unsafe_executed = env.unp_spec().is_unp(&state, &action);
        let transition = env.step(&action)?;
        actor.observe(&transition, rng);
        state = transition.next_state.clone();
        let terminal = transition.terminal;
        log.push(transition, intervened, unsafe_executed);
        if terminal {
            break;
        }
    }

    Ok(log)
}

/// Discounted return of a reward sequence: `sum_t gamma^t * r_t`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> Result<f64, MdpError> {
    if rewards.is_empty() {
        return Err(MdpError::EmptyRewards);
    }
    if !(0.0..=1.0).contains(&gamma) || gamma.is_nan() {
        return Err(MdpError::InvalidGamma { got: gamma });
    }
    // Horner evaluation: exact for gamma = 0 and gamma = 1, numerically
    // tight in between.
    Ok(rewards
        .iter()
        .rev()
        .fold(0.0, |acc, r| r + gamma * acc))
}
