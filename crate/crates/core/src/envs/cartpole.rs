//! Cart-pole balancing with a two-action force controller.
//!
//! A pole is hinged on a cart that slides along a frictionless track; each
//! step applies a fixed force to the left or right. The episode pays +1 for
//! every step the pole stays within 12 degrees of vertical and the cart
//! within 2.4 m of the centre, ends in failure (reward 0) the moment either
//! bound is hit, and ends successfully after 200 steps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mdp::{
    ActionSpace, ActionValue, EnvError, Environment, FeatureState, Transition,
};
use crate::shield::{BackupPolicy, DangerRule, UnpSpec};

pub const FEATURE_NAMES: [&str; 4] = ["x", "x_dot", "theta", "theta_dot"];

pub const GRAVITY: f64 = 9.8;
pub const CART_MASS: f64 = 1.0;
pub const POLE_MASS: f64 = 0.1;
/// Half the pole length, the quantity the dynamics are written in.
pub const POLE_HALF_LENGTH: f64 = 0.5;
pub const FORCE_MAG: f64 = 10.0;
pub const TAU: f64 = 0.02;
pub const MAX_STEPS: usize = 200;

/// Failure bounds: 12 degrees and 2.4 m, both inclusive.
pub const THETA_LIMIT: f64 = 12.0 * std::f64::consts::PI / 180.0;
pub const X_LIMIT: f64 = 2.4;

/// Angle beyond which pushing further toward the fall is non-permissible:
/// 3 degrees.
pub const DANGER_THETA: f64 = 3.0 * std::f64::consts::PI / 180.0;

const TOTAL_MASS: f64 = CART_MASS + POLE_MASS;
const POLEMASS_LENGTH: f64 = POLE_MASS * POLE_HALF_LENGTH;

/// Action index pushing the cart toward negative x.
pub const PUSH_LEFT: usize = 0;
/// Action index pushing the cart toward positive x.
pub const PUSH_RIGHT: usize = 1;

fn tipping_left(s: &FeatureState) -> bool {
    s.values()[2] < -DANGER_THETA && s.values()[3] < 0.0
}

fn tipping_right(s: &FeatureState) -> bool {
    s.values()[2] > DANGER_THETA && s.values()[3] > 0.0
}

fn blocks_left(a: &ActionValue) -> bool {
    matches!(a, ActionValue::Discrete(PUSH_LEFT))
}

fn blocks_right(a: &ActionValue) -> bool {
    matches!(a, ActionValue::Discrete(PUSH_RIGHT))
}

/// Non-permissibility rules: while the pole is already more than 3 degrees
/// off and still falling that way, the push that speeds the fall up —
/// moving the cart away from the direction of tipping — is blocked. A
/// right push drives the angular velocity negative, so it exacerbates a
/// leftward fall, and symmetrically a left push exacerbates a rightward
/// one.
pub fn unp_spec() -> UnpSpec {
    UnpSpec::new(vec![
        DangerRule {
            label: "falling-left-blocks-right-push",
            in_danger: tipping_left,
            blocks: blocks_right,
        },
        DangerRule {
            label: "falling-right-blocks-left-push",
            in_danger: tipping_right,
            blocks: blocks_left,
        },
    ])
}

#[derive(Debug, Clone)]
pub struct CartPole {
    x: f64,
    x_dot: f64,
    theta: f64,
    theta_dot: f64,
    steps: usize,
    terminal: bool,
    rng: ChaCha8Rng,
    unp: UnpSpec,
}

impl CartPole {
    pub fn new(rng: ChaCha8Rng) -> Self {
        let mut env = Self {
            x: 0.0,
            x_dot: 0.0,
            theta: 0.0,
            theta_dot: 0.0,
            steps: 0,
            terminal: false,
            rng,
            unp: unp_spec(),
        };
        env.reset();
        env
    }

    pub fn from_seed(seed: u64) -> Self {
        Self::new(ChaCha8Rng::seed_from_u64(seed))
    }

    fn is_failure(x: f64, theta: f64) -> bool {
        theta.abs() >= THETA_LIMIT || x.abs() >= X_LIMIT
    }

    fn state(&self) -> FeatureState {
        FeatureState::new(
            vec![self.x, self.x_dot, self.theta, self.theta_dot],
            &FEATURE_NAMES,
        )
    }
}

impl Environment for CartPole {
    fn reset(&mut self) -> FeatureState {
        self.x = self.rng.random_range(-0.05..0.05);
        self.x_dot = self.rng.random_range(-0.05..0.05);
        self.theta = self.rng.random_range(-0.05..0.05);
        self.theta_dot = self.rng.random_range(-0.05..0.05);
        self.steps = 0;
        self.terminal = false;
        self.state()
    }

    fn current_state(&self) -> FeatureState {
        self.state()
    }

    fn is_terminal(&self) -> bool {
        self.terminal
    }

    fn step(&mut self, action: &ActionValue) -> Result<Transition, EnvError> {
        if self.terminal {
            return Err(EnvError::SteppedTerminal);
        }
        let force = match action {
            ActionValue::Discrete(PUSH_LEFT) => -FORCE_MAG,
            ActionValue::Discrete(PUSH_RIGHT) => FORCE_MAG,
            other => {
                return Err(EnvError::InvalidAction {
                    got: other.to_string(),
                    reason: "cart-pole actions are 0 (left) or 1 (right)".into(),
                })
            }
        };

        let state = self.state();
        let cos_theta = self.theta.cos();
        let sin_theta = self.theta.sin();
        let temp =
            (force + POLEMASS_LENGTH * self.theta_dot * self.theta_dot * sin_theta) / TOTAL_MASS;
        let theta_acc = (GRAVITY * sin_theta - cos_theta * temp)
            / (POLE_HALF_LENGTH
                * (4.0 / 3.0 - POLE_MASS * cos_theta * cos_theta / TOTAL_MASS));
        let x_acc = temp - POLEMASS_LENGTH * theta_acc * cos_theta / TOTAL_MASS;

        // Simultaneous Euler update: every derivative is evaluated at the
        // pre-step state.
        self.x += TAU * self.x_dot;
        self.x_dot += TAU * x_acc;
        self.theta += TAU * self.theta_dot;
        self.theta_dot += TAU * theta_acc;
        self.steps += 1;

        let failure = Self::is_failure(self.x, self.theta);
        let success = !failure && self.steps >= MAX_STEPS;
        self.terminal = failure || success;
        let reward = if failure { 0.0 } else { 1.0 };

        Ok(Transition::new(
            state,
            *action,
            reward,
            self.state(),
            self.terminal,
            failure,
        ))
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete { count: 2 }
    }

    fn unp_spec(&self) -> &UnpSpec {
        &self.unp
    }

    fn backup_policy(&self) -> BackupPolicy {
        BackupPolicy::OtherDiscrete
    }

    fn min_reward(&self) -> f64 {
        0.0
    }

    fn set_state(&mut self, state: &FeatureState) -> Result<(), EnvError> {
        if state.dim() != 4 {
            return Err(EnvError::InvalidState {
                reason: format!("cart-pole states have 4 features, got {}", state.dim()),
            });
        }
        let v = state.values();
        self.x = v[0];
        self.x_dot = v[1];
        self.theta = v[2];
        self.theta_dot = v[3];
        self.steps = 0;
        self.terminal = Self::is_failure(self.x, self.theta);
        Ok(())
    }

    fn clone_env(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}
