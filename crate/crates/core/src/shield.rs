//! Runtime action shielding.
//!
//! A [`UnpSpec`] declares which actions are non-permissible in which states
//! as a list of danger rules. A [`Shield`] wraps any action source and, at
//! selection time, swaps a non-permissible proposal for the backup action —
//! otherwise it passes proposals through untouched, so it never interferes
//! with a permissible choice. The module also hosts the validation helpers
//! that make safety claims checkable: an exhaustive backup-safety grid sweep
//! and a probe of the failure/reward coupling every environment promises.

use rand::RngCore;
use thiserror::Error;

use crate::mdp::{ActionSource, ActionValue, Environment, FeatureState};

pub type StatePredicate = fn(&FeatureState) -> bool;
pub type ActionPredicate = fn(&ActionValue) -> bool;

#[derive(Debug, Error)]
pub enum ShieldError {
    #[error("backup action is itself non-permissible in state [{state}]: proposed {proposed}, backup {backup}")]
    BackupFailure {
        state: String,
        proposed: String,
        backup: String,
    },
    #[error("backup rule {rule} cannot apply to action {action}")]
    BackupUnsupported {
        rule: &'static str,
        action: String,
    },
    #[error("interference rate is undefined before the first query")]
    NoQueries,
}

/// One danger rule: in states where `in_danger` holds, every action matched
/// by `blocks` is non-permissible. The label shows up in diagnostics only.
#[derive(Clone, Copy)]
pub struct DangerRule {
    pub label: &'static str,
    pub in_danger: StatePredicate,
    pub blocks: ActionPredicate,
}

impl std::fmt::Debug for DangerRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DangerRule").field("label", &self.label).finish()
    }
}

/// A set of danger rules; an action is non-permissible when any rule fires.
#[derive(Debug, Clone, Default)]
pub struct UnpSpec {
    rules: Vec<DangerRule>,
}

impl UnpSpec {
    pub fn new(rules: Vec<DangerRule>) -> Self {
        Self { rules }
    }

    pub fn rules(&self) -> &[DangerRule] {
        &self.rules
    }

    /// True when `action` is non-permissible in `state`.
    pub fn is_unp(&self, state: &FeatureState, action: &ActionValue) -> bool {
        self.rules
            .iter()
            .any(|r| (r.in_danger)(state) && (r.blocks)(action))
    }
}

/// How the shield replaces a blocked action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackupPolicy {
    /// For two-action discrete spaces: play the other action.
    OtherDiscrete,
    /// For `[-1, 1]` continuous spaces: steer the opposite way.
    NegateContinuous,
}

impl BackupPolicy {
    pub fn backup(&self, proposed: &ActionValue) -> Result<ActionValue, ShieldError> {
        match (self, proposed) {
            (BackupPolicy::OtherDiscrete, ActionValue::Discrete(i)) if *i < 2 => {
                Ok(ActionValue::Discrete(1 - i))
            }
            (BackupPolicy::NegateContinuous, ActionValue::Continuous(a)) => {
                Ok(ActionValue::Continuous(-a))
            }
            _ => Err(ShieldError::BackupUnsupported {
                rule: match self {
                    BackupPolicy::OtherDiscrete => "other-discrete",
                    BackupPolicy::NegateContinuous => "negate-continuous",
                },
                action: proposed.to_string(),
            }),
        }
    }
}

/// The post-posed shield: consults the policy, filters the proposal, and
/// keeps interference statistics. Filtering decisions depend only on the
/// current state and proposal, never on the counters.
#[derive(Debug, Clone)]
pub struct Shield {
    spec: UnpSpec,
    backup: BackupPolicy,
    queries: u64,
    interventions: u64,
}

impl Shield {
    pub fn new(spec: UnpSpec, backup: BackupPolicy) -> Self {
        Self {
            spec,
            backup,
            queries: 0,
            interventions: 0,
        }
    }

    /// Builds the shield an environment ships with.
    pub fn for_env(env: &dyn Environment) -> Self {
        Self::new(env.unp_spec().clone(), env.backup_policy())
    }

    pub fn spec(&self) -> &UnpSpec {
        &self.spec
    }

    /// Queries the policy and returns `(action, intervened)`. A permissible
    /// proposal passes through unchanged; a non-permissible one is replaced
    /// by the backup action, which must itself be permissible — anything
    /// else aborts the run rather than execute an unsafe action.
    pub fn act(
        &mut self,
        policy: &mut dyn ActionSource,
        state: &FeatureState,
        rng: &mut dyn RngCore,
    ) -> Result<(ActionValue, bool), ShieldError> {
        let proposed = policy.select(state, rng);
        self.filter(state, proposed)
    }

    /// The filtering core, independent of where the proposal came from.
    pub fn filter(
        &mut self,
        state: &FeatureState,
        proposed: ActionValue,
    ) -> Result<(ActionValue, bool), ShieldError> {
        self.queries += 1;
        if !self.spec.is_unp(state, &proposed) {
            return Ok((proposed, false));
        }
        let backup = self.backup.backup(&proposed)?;
        if self.spec.is_unp(state, &backup) {
            return Err(ShieldError::BackupFailure {
                state: format_state(state),
                proposed: proposed.to_string(),
                backup: backup.to_string(),
            });
        }
        self.interventions += 1;
        Ok((backup, true))
    }

    pub fn queries(&self) -> u64 {
        self.queries
    }

    pub fn interventions(&self) -> u64 {
        self.interventions
    }

    /// Fraction of queries that required an intervention.
    pub fn interference_rate(&self) -> Result<f64, ShieldError> {
        if self.queries == 0 {
            return Err(ShieldError::NoQueries);
        }
        Ok(self.interventions as f64 / self.queries as f64)
    }
}

impl crate::mdp::ActionFilter for Shield {
    fn shield_action(
        &mut self,
        policy: &mut dyn ActionSource,
        state: &FeatureState,
        _env: &dyn Environment,
        rng: &mut dyn RngCore,
    ) -> Result<(ActionValue, bool), ShieldError> {
        self.act(policy, state, rng)
    }
}

fn format_state(state: &FeatureState) -> String {
    state
        .names()
        .iter()
        .zip(state.values())
        .map(|(n, v)| format!("{n}={v}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// One state/action pair whose backup replacement is still non-permissible.
#[derive(Debug, Clone)]
pub struct GridViolation {
    pub state: FeatureState,
    pub action: ActionValue,
    pub backup: ActionValue,
}

/// Result of sweeping a (`spec`, `backup`) pair over a state/action grid.
#[derive(Debug, Clone, Default)]
pub struct GridReport {
    pub states: usize,
    pub pairs_checked: usize,
    pub blocked_pairs: usize,
    pub violation_count: usize,
    /// First few violations, for diagnostics; see `violation_count` for the
    /// full tally.
    pub violations: Vec<GridViolation>,
}

impl GridReport {
    pub fn passed(&self) -> bool {
        self.violation_count == 0
    }
}

/// Checks, over every state in `states` and every action in `actions`, that
/// whenever `spec` blocks the action the backup replacement is
/// permissible. This is the mechanical counterpart of the shield's
/// "guaranteed correctness" contract.
pub fn check_backup_safety<I>(
    spec: &UnpSpec,
    backup: BackupPolicy,
    states: I,
    actions: &[ActionValue],
) -> Result<GridReport, ShieldError>
where
    I: IntoIterator<Item = FeatureState>,
{
    const KEEP: usize = 8;
    let mut report = GridReport::default();
    for state in states {
        report.states += 1;
        for action in actions {
            report.pairs_checked += 1;
            if !spec.is_unp(&state, action) {
                continue;
            }
            report.blocked_pairs += 1;
            let replacement = backup.backup(action)?;
            if spec.is_unp(&state, &replacement) {
                report.violation_count += 1;
                if report.violations.len() < KEEP {
                    report.violations.push(GridViolation {
                        state: state.clone(),
                        action: *action,
                        backup: replacement,
                    });
                }
            }
        }
    }
    Ok(report)
}

/// A probe where the failure/reward coupling broke: either a failure step
/// paid something other than the environment's minimum reward, or a
/// non-failure step paid the minimum.
#[derive(Debug, Clone)]
pub struct AssumptionViolation {
    pub state: FeatureState,
    pub action: ActionValue,
    pub reward: f64,
    pub failure: bool,
}

/// Outcome of [`validate_assumption1`].
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    pub probes: usize,
    pub steps_checked: usize,
    pub min_reward: f64,
    pub violations: Vec<AssumptionViolation>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Verifies, over a set of probe states, that the environment pays its
/// minimum reward exactly on failure steps and strictly more otherwise.
/// Failure implying termination is enforced structurally by
/// [`crate::mdp::Transition`], so together the two checks cover the reward
/// coupling that shielded learning relies on.
///
/// Probe states that are already terminal are skipped; every applicable
/// action (all of them for discrete spaces, a five-point grid for
/// continuous ones) is tried from each remaining probe.
pub fn validate_assumption1(
    env: &mut dyn Environment,
    probes: &[FeatureState],
) -> Result<AssumptionReport, crate::mdp::EnvError> {
    let actions: Vec<ActionValue> = match env.action_space() {
        crate::mdp::ActionSpace::Discrete { count } => {
            (0..count).map(ActionValue::Discrete).collect()
        }
        crate::mdp::ActionSpace::Continuous { low, high } => (0..5)
            .map(|k| ActionValue::Continuous(low + k as f64 * (high - low) / 4.0))
            .collect(),
    };

    let mut report = AssumptionReport {
        probes: 0,
        steps_checked: 0,
        min_reward: env.min_reward(),
        violations: Vec::new(),
    };

    for probe in probes {
        env.set_state(probe)?;
        if env.is_terminal() {
            continue;
        }
        report.probes += 1;
        for action in &actions {
            env.set_state(probe)?;
            let t = env.step(action)?;
            report.steps_checked += 1;
            let broken = if t.failure {
                t.reward != report.min_reward
            } else {
                t.reward <= report.min_reward
            };
            if broken {
                report.violations.push(AssumptionViolation {
                    state: probe.clone(),
                    action: *action,
                    reward: t.reward,
                    failure: t.failure,
                });
            }
        }
    }
    Ok(report)
}
