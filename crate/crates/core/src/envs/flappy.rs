//! A flappy-bird clone on integer pixel physics.
//!
//! The bird falls under gravity unless a flap resets its vertical velocity;
//! pipes scroll toward it at constant speed and each pipe has a 100 px gap
//! at a random height. Slipping through a gap pays +1 and spawns the next
//! pipe, hitting one pays -1 and ends the episode in failure, and every
//! other step pays 0.1. An episode that accumulates 1000 reward ends
//! successfully.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mdp::{
    ActionSpace, ActionValue, EnvError, Environment, FeatureState, Transition,
};
use crate::shield::{BackupPolicy, DangerRule, UnpSpec};

pub const FEATURE_NAMES: [&str; 5] = ["y_bird", "v_y", "x_dist", "y_lpipe", "y_upipe"];

/// Velocity set by a flap, px per step (positive is up).
pub const FLAP_VELOCITY: f64 = 8.0;
/// Gravity, px per step per step.
pub const GRAVITY: f64 = 1.0;
/// Horizontal scroll speed, px per step.
pub const SCROLL_SPEED: f64 = 4.0;
/// Vertical size of every pipe gap, px.
pub const GAP_HEIGHT: f64 = 100.0;
/// Horizontal distance to a freshly spawned pipe, px.
pub const PIPE_DISTANCE: f64 = 150.0;
/// The gap's lower edge is drawn uniformly from this range.
pub const GAP_BOTTOM_RANGE: (f64, f64) = (-50.0, 150.0);
pub const STEP_REWARD: f64 = 0.1;
pub const CLEAR_REWARD: f64 = 1.0;
pub const CRASH_REWARD: f64 = -1.0;
/// Accumulated reward at which the episode ends successfully.
pub const SUCCESS_REWARD: f64 = 1000.0;

/// Action index for doing nothing.
pub const IDLE: usize = 0;
/// Action index for flapping.
pub const FLAP: usize = 1;

fn below_gap(s: &FeatureState) -> bool {
    s.values()[0] < s.values()[3]
}

fn above_gap(s: &FeatureState) -> bool {
    s.values()[0] > s.values()[4]
}

fn blocks_idle(a: &ActionValue) -> bool {
    matches!(a, ActionValue::Discrete(IDLE))
}

fn blocks_flap(a: &ActionValue) -> bool {
    matches!(a, ActionValue::Discrete(FLAP))
}

/// Non-permissibility rules: strictly below the upcoming gap the bird must
/// flap (idling is blocked), strictly above it flapping is blocked. The two
/// danger regions are disjoint, so the opposite action is always available.
pub fn unp_spec() -> UnpSpec {
    UnpSpec::new(vec![
        DangerRule {
            label: "below-gap-blocks-idle",
            in_danger: below_gap,
            blocks: blocks_idle,
        },
        DangerRule {
            label: "above-gap-blocks-flap",
            in_danger: above_gap,
            blocks: blocks_flap,
        },
    ])
}

#[derive(Debug, Clone)]
pub struct FlappyBird {
    y_bird: f64,
    v_y: f64,
    x_dist: f64,
    y_lpipe: f64,
    total_reward: f64,
    terminal: bool,
    rng: ChaCha8Rng,
    unp: UnpSpec,
}

impl FlappyBird {
    pub fn new(rng: ChaCha8Rng) -> Self {
        let mut env = Self {
            y_bird: 0.0,
            v_y: 0.0,
            x_dist: PIPE_DISTANCE,
            y_lpipe: 0.0,
            total_reward: 0.0,
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

    fn draw_gap_bottom(&mut self) -> f64 {
        self.rng
            .random_range(GAP_BOTTOM_RANGE.0..GAP_BOTTOM_RANGE.1)
    }

    fn state(&self) -> FeatureState {
        FeatureState::new(
            vec![
                self.y_bird,
                self.v_y,
                self.x_dist,
                self.y_lpipe,
                self.y_lpipe + GAP_HEIGHT,
            ],
            &FEATURE_NAMES,
        )
    }
}

impl Environment for FlappyBird {
    fn reset(&mut self) -> FeatureState {
        self.y_lpipe = self.draw_gap_bottom();
        self.y_bird = self.y_lpipe + GAP_HEIGHT / 2.0;
        self.v_y = 0.0;
        self.x_dist = PIPE_DISTANCE;
        self.total_reward = 0.0;
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
        match action {
            ActionValue::Discrete(FLAP) => self.v_y = FLAP_VELOCITY,
            ActionValue::Discrete(IDLE) => self.v_y -= GRAVITY,
            other => {
                return Err(EnvError::InvalidAction {
                    got: other.to_string(),
                    reason: "flappy actions are 0 (idle) or 1 (flap)".into(),
                })
            }
        }

        let state = self.state();
        self.y_bird += self.v_y;
        self.x_dist -= SCROLL_SPEED;

        let mut failure = false;
        let reward;
        if self.x_dist <= 0.0 {
            // The bird is passing the pipe: strictly inside the gap clears
            // it, anything else is a crash.
            let gap_top = self.y_lpipe + GAP_HEIGHT;
            if self.y_lpipe < self.y_bird && self.y_bird < gap_top {
                reward = CLEAR_REWARD;
                self.y_lpipe = self.draw_gap_bottom();
                self.x_dist = PIPE_DISTANCE;
            } else {
                reward = CRASH_REWARD;
                failure = true;
            }
        } else {
            reward = STEP_REWARD;
        }

        self.total_reward += reward;
        let success = !failure && self.total_reward >= SUCCESS_REWARD;
        self.terminal = failure || success;

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
        CRASH_REWARD
    }

    fn set_state(&mut self, state: &FeatureState) -> Result<(), EnvError> {
        if state.dim() != 5 {
            return Err(EnvError::InvalidState {
                reason: format!("flappy states have 5 features, got {}", state.dim()),
            });
        }
        let v = state.values();
        if (v[4] - (v[3] + GAP_HEIGHT)).abs() > 1e-9 {
            return Err(EnvError::InvalidState {
                reason: format!(
                    "gap must be exactly {GAP_HEIGHT} px: lower {}, upper {}",
                    v[3], v[4]
                ),
            });
        }
        if !(v[2] > 0.0 && v[2] <= PIPE_DISTANCE) {
            return Err(EnvError::InvalidState {
                reason: format!("pipe distance must lie in (0, {PIPE_DISTANCE}], got {}", v[2]),
            });
        }
        self.y_bird = v[0];
        self.v_y = v[1];
        self.x_dist = v[2];
        self.y_lpipe = v[3];
        self.total_reward = 0.0;
        self.terminal = false;
        Ok(())
    }

    fn clone_env(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;
    use crate::mdp::{run_episode, ActionSource, RandomPolicy};

    fn poised(y_bird: f64, v_y: f64, x_dist: f64, y_lpipe: f64) -> FlappyBird {
        let mut env = FlappyBird::from_seed(8);
        env.set_state(&FeatureState::new(
            vec![y_bird, v_y, x_dist, y_lpipe, y_lpipe + GAP_HEIGHT],
            &FEATURE_NAMES,
        ))
        .unwrap();
        env
    }

    #[test]
    fn idle_applies_gravity_before_moving() {
        let mut env = poised(100.0, 0.0, 150.0, 50.0);
        let t = env.step(&ActionValue::Discrete(IDLE)).unwrap();
        let v = t.next_state.values();
        assert_eq!(v[0], 99.0, "y after one idle step");
        assert_eq!(v[1], -1.0, "velocity after one idle step");
        assert_eq!(v[2], 146.0, "pipe distance after one step");
        assert_eq!(t.reward, STEP_REWARD);

        // Gravity accumulates.
        let t = env.step(&ActionValue::Discrete(IDLE)).unwrap();
        assert_eq!(t.next_state.values()[0], 97.0);
        assert_eq!(t.next_state.values()[1], -2.0);
    }

    #[test]
    fn flap_sets_velocity_rather_than_adding() {
        let mut env = poised(100.0, -7.0, 150.0, 50.0);
        let t = env.step(&ActionValue::Discrete(FLAP)).unwrap();
        assert_eq!(t.next_state.values()[1], FLAP_VELOCITY);
        assert_eq!(t.next_state.values()[0], 108.0);
    }

    #[test]
    fn clearing_a_gap_pays_one_and_spawns_a_pipe() {
        let mut env = poised(100.0, 0.0, 4.0, 50.0);
        let t = env.step(&ActionValue::Discrete(IDLE)).unwrap();
        assert_eq!(t.reward, CLEAR_REWARD);
        assert!(!t.terminal);
        let v = t.next_state.values();
        assert_eq!(v[2], PIPE_DISTANCE, "distance reset to the next pipe");
        assert!(v[3] >= GAP_BOTTOM_RANGE.0 && v[3] < GAP_BOTTOM_RANGE.1);
        assert_eq!(v[4], v[3] + GAP_HEIGHT, "gap height is fixed");
    }

    #[test]
    fn gap_edges_are_exclusive() {
        // The bird lands exactly on the lower edge: y = 50 after the step
        // (idle from 51 with v = 0 gives v = -1, y = 50). A boundary hit is
        // a crash.
        let mut env = poised(51.0, 0.0, 4.0, 50.0);
        let t = env.step(&ActionValue::Discrete(IDLE)).unwrap();
        assert_eq!(t.next_state.values()[0], 50.0);
        assert_eq!(t.reward, CRASH_REWARD);
        assert!(t.failure);
        assert!(t.terminal);
    }

    #[test]
    fn missing_the_gap_fails_the_episode() {
        let mut env = poised(200.0, 0.0, 4.0, 50.0);
        let t = env.step(&ActionValue::Discrete(IDLE)).unwrap();
        assert_eq!(t.reward, CRASH_REWARD);
        assert!(t.failure);
        assert!(matches!(
            env.step(&ActionValue::Discrete(IDLE)),
            Err(EnvError::SteppedTerminal)
        ));
    }

    /// Bang-bang gap tracking: flap strictly below the gap centre, idle
    /// otherwise. Stays inside gaps indefinitely.
    struct GapTracker;

    impl ActionSource for GapTracker {
        fn select(&mut self, s: &FeatureState, _rng: &mut dyn RngCore) -> ActionValue {
            let v = s.values();
            if v[0] < v[3] + GAP_HEIGHT / 2.0 {
                ActionValue::Discrete(FLAP)
            } else {
                ActionValue::Discrete(IDLE)
            }
        }
    }

    #[test]
    fn accumulating_1000_reward_ends_the_episode_successfully() {
        let mut env = FlappyBird::from_seed(1234);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let log = run_episode(&mut env, &mut GapTracker, None, 100_000, &mut rng).unwrap();
        let last = log.transitions.last().unwrap();
        assert!(last.terminal);
        assert!(!last.failure, "tracker crashed after {} steps", log.len());
        assert!(log.episode_reward >= SUCCESS_REWARD);
        assert!(log.episode_reward < SUCCESS_REWARD + CLEAR_REWARD + STEP_REWARD);
    }

    #[test]
    fn unp_rules_require_flapping_below_and_forbid_it_above() {
        let spec = unp_spec();
        let below = FeatureState::new(vec![40.0, 0.0, 80.0, 50.0, 150.0], &FEATURE_NAMES);
        assert!(spec.is_unp(&below, &ActionValue::Discrete(IDLE)));
        assert!(!spec.is_unp(&below, &ActionValue::Discrete(FLAP)));

        let above = FeatureState::new(vec![160.0, 0.0, 80.0, 50.0, 150.0], &FEATURE_NAMES);
        assert!(spec.is_unp(&above, &ActionValue::Discrete(FLAP)));
        assert!(!spec.is_unp(&above, &ActionValue::Discrete(IDLE)));

        // Strict comparisons: sitting exactly on an edge blocks nothing.
        for y in [50.0, 150.0] {
            let edge = FeatureState::new(vec![y, 0.0, 80.0, 50.0, 150.0], &FEATURE_NAMES);
            assert!(!spec.is_unp(&edge, &ActionValue::Discrete(IDLE)));
            assert!(!spec.is_unp(&edge, &ActionValue::Discrete(FLAP)));
        }
    }

    #[test]
    fn set_state_validates_gap_and_distance() {
        let mut env = FlappyBird::from_seed(0);
        assert!(env
            .set_state(&FeatureState::new(
                vec![0.0, 0.0, 80.0, 50.0, 140.0],
                &FEATURE_NAMES
            ))
            .is_err());
        assert!(env
            .set_state(&FeatureState::new(
                vec![0.0, 0.0, 0.0, 50.0, 150.0],
                &FEATURE_NAMES
            ))
            .is_err());
        assert!(env
            .set_state(&FeatureState::new(
                vec![0.0, 0.0, 200.0, 50.0, 150.0],
                &FEATURE_NAMES
            ))
            .is_err());
    }

    #[test]
    fn same_seed_reproduces_pipes_and_trajectories_bitwise() {
        let mut a = FlappyBird::from_seed(2222);
        let mut b = FlappyBird::from_seed(2222);
        let mut actor_a = RandomPolicy::new(a.action_space());
        let mut actor_b = RandomPolicy::new(b.action_space());
        let mut ra = ChaCha8Rng::seed_from_u64(6);
        let mut rb = ChaCha8Rng::seed_from_u64(6);
        let la = run_episode(&mut a, &mut actor_a, None, 5000, &mut ra).unwrap();
        let lb = run_episode(&mut b, &mut actor_b, None, 5000, &mut rb).unwrap();
        assert_eq!(la, lb);
    }

    #[test]
    fn initial_bird_sits_at_the_gap_centre() {
        let mut env = FlappyBird::from_seed(31);
        for _ in 0..10 {
            let s = env.reset();
            let v = s.values();
            assert_eq!(v[0], v[3] + GAP_HEIGHT / 2.0);
            assert_eq!(v[1], 0.0);
            assert_eq!(v[2], PIPE_DISTANCE);
        }
    }
}
