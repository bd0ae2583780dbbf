//! Model-based shielding by depth-limited simulation.
//!
//! Instead of declared rules, this baseline clones the environment and asks
//! whether a proposed action can be followed by *any* safe continuation
//! within a fixed horizon. It rejects the action only when every simulated
//! continuation goes unsafe — which makes it blind to hazards that sit just
//! past the horizon, the failure mode the rule-based shield does not have.

use rand::RngCore;

use crate::mdp::{
    ActionFilter, ActionSource, ActionSpace, ActionValue, Environment, FeatureState,
};
use crate::shield::{ShieldError, StatePredicate};

/// Lookahead parameters: `depth` counts the total simulated horizon
/// including the step that plays the proposed action itself, and `branch`
/// is how many evenly spaced samples represent a continuous action space at
/// each level (discrete spaces are enumerated exhaustively).
#[derive(Debug, Clone, Copy)]
pub struct MbsConfig {
    pub depth: usize,
    pub branch: usize,
    pub safe_state: StatePredicate,
}

impl MbsConfig {
    fn candidate_actions(&self, space: ActionSpace) -> Vec<ActionValue> {
        match space {
            ActionSpace::Discrete { count } => (0..count).map(ActionValue::Discrete).collect(),
            ActionSpace::Continuous { low, high } => {
                if self.branch == 1 {
                    return vec![ActionValue::Continuous((low + high) / 2.0)];
                }
                (0..self.branch)
                    .map(|k| {
                        ActionValue::Continuous(
                            low + k as f64 * (high - low) / (self.branch - 1) as f64,
                        )
                    })
                    .collect()
            }
        }
    }
}

/// Accepts `action` in the model's current state unless every simulated
/// continuation of length `depth` hits an unsafe state. The model itself is
/// never mutated; all stepping happens on clones.
///
/// # Panics
/// Panics if the model is terminal or `depth` is zero — callers only filter
/// actions for states they are about to step.
pub fn mbs_filter(
    model: &dyn Environment,
    action: &ActionValue,
    cfg: &MbsConfig,
) -> bool {
    assert!(cfg.depth >= 1, "lookahead needs at least the action step");
    assert!(!model.is_terminal(), "cannot filter actions in a terminal state");

    let mut sim = model.clone_env();
    let t = sim
        .step(action)
        .expect("simulated step from a non-terminal state");
    if t.failure || !(cfg.safe_state)(&t.next_state) {
        // Every continuation shares this prefix, so they are all unsafe.
        return false;
    }
    if t.terminal {
        // Ended successfully within the horizon.
        return true;
    }
    exists_safe_continuation(sim.as_ref(), cfg.depth - 1, cfg)
}

fn exists_safe_continuation(sim: &dyn Environment, remaining: usize, cfg: &MbsConfig) -> bool {
    if remaining == 0 {
        return true;
    }
    for action in cfg.candidate_actions(sim.action_space()) {
        let mut child = sim.clone_env();
        let t = child
            .step(&action)
            .expect("simulated step from a non-terminal state");
        if t.failure || !(cfg.safe_state)(&t.next_state) {
            continue;
        }
        if t.terminal || exists_safe_continuation(child.as_ref(), remaining - 1, cfg) {
            return true;
        }
    }
    false
}

/// The simulation-based counterpart of the rule shield: filters proposals
/// through [`mbs_filter`] and, when a proposal is rejected, searches a fixed
/// candidate list for a replacement that passes. If nothing passes, the
/// original proposal goes through unchanged (there is no safe option to
/// offer) and `no_safe_option` is incremented.
#[derive(Debug, Clone)]
pub struct MbsShield {
    cfg: MbsConfig,
    queries: u64,
    interventions: u64,
    no_safe_option: u64,
}

impl MbsShield {
    pub fn new(cfg: MbsConfig) -> Self {
        Self {
            cfg,
            queries: 0,
            interventions: 0,
            no_safe_option: 0,
        }
    }

    pub fn config(&self) -> &MbsConfig {
        &self.cfg
    }

    pub fn queries(&self) -> u64 {
        self.queries
    }

    pub fn interventions(&self) -> u64 {
        self.interventions
    }

    pub fn no_safe_option(&self) -> u64 {
        self.no_safe_option
    }

    /// Replacement candidates for a rejected proposal, in the deterministic
    /// order they are tried: the remaining discrete actions by index, or —
    /// for continuous spaces — the sign-flipped proposal followed by the
    /// sampling grid.
    fn fallback_candidates(
        &self,
        space: ActionSpace,
        proposed: &ActionValue,
    ) -> Vec<ActionValue> {
        match space {
            ActionSpace::Discrete { count } => (0..count)
                .map(ActionValue::Discrete)
                .filter(|a| a != proposed)
                .collect(),
            ActionSpace::Continuous { .. } => {
                let mut candidates = Vec::with_capacity(self.cfg.branch + 1);
                if let Some(a) = proposed.scalar() {
                    candidates.push(ActionValue::Continuous(-a));
                }
                for a in self.cfg.candidate_actions(space) {
                    if candidates.iter().any(|c| c == &a) || a == *proposed {
                        continue;
                    }
                    candidates.push(a);
                }
                candidates
            }
        }
    }

    pub fn act(
        &mut self,
        policy: &mut dyn ActionSource,
        state: &FeatureState,
        env: &dyn Environment,
        rng: &mut dyn RngCore,
    ) -> Result<(ActionValue, bool), ShieldError> {
        let proposed = policy.select(state, rng);
        self.queries += 1;
        if mbs_filter(env, &proposed, &self.cfg) {
            return Ok((proposed, false));
        }
        for candidate in self.fallback_candidates(env.action_space(), &proposed) {
            if mbs_filter(env, &candidate, &self.cfg) {
                self.interventions += 1;
                return Ok((candidate, true));
            }
        }
        self.no_safe_option += 1;
        Ok((proposed, false))
    }
}

impl ActionFilter for MbsShield {
    fn shield_action(
        &mut self,
        policy: &mut dyn ActionSource,
        state: &FeatureState,
        env: &dyn Environment,
        rng: &mut dyn RngCore,
    ) -> Result<(ActionValue, bool), ShieldError> {
        self.act(policy, state, env, rng)
    }
}
