//! Lane keeping on a looping track with alternating straight and curved
//! segments.
//!
//! A car moves at constant speed; the continuous action in `[-1, 1]` steers
//! it. Kinematics are deliberately simple — heading integrates steering
//! minus the track's curvature, lateral offset integrates the heading — so
//! the whole environment is a closed-form map that clones cheaply for
//! model-based lookahead. Reward is 0 while the car stays inside the lane
//! and -200 with failure the moment the normalized offset reaches the lane
//! edge; surviving 5000 steps ends the episode successfully.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mdp::{
    ActionSpace, ActionValue, EnvError, Environment, FeatureState, Transition,
};
use crate::shield::{BackupPolicy, DangerRule, UnpSpec};

pub const FEATURE_NAMES: [&str; 4] = ["psi", "delta", "kappa", "v"];

/// Constant forward speed in m/s.
pub const SPEED: f64 = 20.0;
/// Half lane width in metres; `delta` is the offset divided by this.
pub const HALF_WIDTH: f64 = 4.0;
/// Steering gain: heading rate per unit action, rad/s.
pub const STEER_GAIN: f64 = 0.5;
pub const DT: f64 = 0.05;
pub const MAX_STEPS: usize = 5000;
pub const FAILURE_REWARD: f64 = -200.0;

/// The track alternates straight and curved segments of this length (m).
pub const SEGMENT_LENGTH: f64 = 250.0;
/// Signed curvature of consecutive segments (1/m), cycling forever.
pub const CURVATURE_CYCLE: [f64; 4] = [0.0, 0.01, 0.0, -0.01];

/// Normalized offset beyond which steering further outward is
/// non-permissible.
pub const DANGER_DELTA: f64 = 0.5;

pub fn curvature_at(track_pos: f64) -> f64 {
    let segment = (track_pos / SEGMENT_LENGTH).floor() as i64;
    CURVATURE_CYCLE[segment.rem_euclid(4) as usize]
}

fn near_left_edge(s: &FeatureState) -> bool {
    s.values()[1] < -DANGER_DELTA
}

fn near_right_edge(s: &FeatureState) -> bool {
    s.values()[1] > DANGER_DELTA
}

fn steers_left(a: &ActionValue) -> bool {
    matches!(a, ActionValue::Continuous(v) if *v < 0.0)
}

fn steers_right(a: &ActionValue) -> bool {
    matches!(a, ActionValue::Continuous(v) if *v > 0.0)
}

/// Non-permissibility rules: once the car is more than halfway toward a
/// lane edge, steering further toward that edge is blocked. Positive
/// actions raise the heading and hence the offset, so they pair with the
/// right edge.
pub fn unp_spec() -> UnpSpec {
    UnpSpec::new(vec![
        DangerRule {
            label: "near-left-edge-blocks-steering-left",
            in_danger: near_left_edge,
            blocks: steers_left,
        },
        DangerRule {
            label: "near-right-edge-blocks-steering-right",
            in_danger: near_right_edge,
            blocks: steers_right,
        },
    ])
}

#[derive(Debug, Clone)]
pub struct LaneKeep {
    psi: f64,
    offset: f64,
    track_pos: f64,
    steps: usize,
    terminal: bool,
    rng: ChaCha8Rng,
    unp: UnpSpec,
}

impl LaneKeep {
    pub fn new(rng: ChaCha8Rng) -> Self {
        let mut env = Self {
            psi: 0.0,
            offset: 0.0,
            track_pos: 0.0,
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

    pub fn delta(&self) -> f64 {
        self.offset / HALF_WIDTH
    }

    fn state(&self) -> FeatureState {
        FeatureState::new(
            vec![
                self.psi,
                self.delta(),
                curvature_at(self.track_pos),
                SPEED,
            ],
            &FEATURE_NAMES,
        )
    }
}

impl Environment for LaneKeep {
    fn reset(&mut self) -> FeatureState {
        self.psi = 0.0;
        self.offset = HALF_WIDTH * self.rng.random_range(-0.1..0.1);
        self.track_pos = 0.0;
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
        let a = match action {
            ActionValue::Continuous(a) if a.is_finite() && a.abs() <= 1.0 => *a,
            other => {
                return Err(EnvError::InvalidAction {
                    got: other.to_string(),
                    reason: "lane-keeping actions are reals in [-1, 1]".into(),
                })
            }
        };

        let state = self.state();
        // Heading first (relative to the lane: track curvature counts
        // against it), then the offset integrates the new heading.
        self.psi += (a * STEER_GAIN - curvature_at(self.track_pos) * SPEED) * DT;
        self.offset += SPEED * self.psi.sin() * DT;
        self.track_pos += SPEED * DT;
        self.steps += 1;

        let failure = self.delta().abs() >= 1.0;
        let success = !failure && self.steps >= MAX_STEPS;
        self.terminal = failure || success;
        let reward = if failure { FAILURE_REWARD } else { 0.0 };

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
        ActionSpace::Continuous {
            low: -1.0,
            high: 1.0,
        }
    }

    fn unp_spec(&self) -> &UnpSpec {
        &self.unp
    }

    fn backup_policy(&self) -> BackupPolicy {
        BackupPolicy::NegateContinuous
    }

    fn min_reward(&self) -> f64 {
        FAILURE_REWARD
    }

    fn set_state(&mut self, state: &FeatureState) -> Result<(), EnvError> {
        if state.dim() != 4 {
            return Err(EnvError::InvalidState {
                reason: format!("lane-keeping states have 4 features, got {}", state.dim()),
            });
        }
        let v = state.values();
        if (v[3] - SPEED).abs() > 1e-9 {
            return Err(EnvError::InvalidState {
                reason: format!("speed is fixed at {SPEED} m/s, got {}", v[3]),
            });
        }
        // Map the curvature feature back to a track position: the start of
        // the first segment with that curvature.
        let segment = CURVATURE_CYCLE
            .iter()
            .position(|k| (k - v[2]).abs() < 1e-12)
            .ok_or_else(|| EnvError::InvalidState {
                reason: format!("curvature {} is not on the track", v[2]),
            })?;
        self.psi = v[0];
        self.offset = v[1] * HALF_WIDTH;
        self.track_pos = segment as f64 * SEGMENT_LENGTH;
        self.steps = 0;
        self.terminal = self.delta().abs() >= 1.0;
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

    fn centered(seed: u64) -> LaneKeep {
        let mut env = LaneKeep::from_seed(seed);
        env.set_state(&FeatureState::new(
            vec![0.0, 0.0, 0.0, SPEED],
            &FEATURE_NAMES,
        ))
        .unwrap();
        env
    }

    #[test]
    fn straight_segment_is_an_equilibrium() {
        let mut env = centered(0);
        for _ in 0..100 {
            let t = env.step(&ActionValue::Continuous(0.0)).unwrap();
            assert_eq!(t.next_state.values()[0], 0.0);
            assert_eq!(t.next_state.values()[1], 0.0);
            assert_eq!(t.reward, 0.0);
            assert!(!t.terminal);
        }
    }

    #[test]
    fn one_steering_step_matches_hand_solution() {
        // a = 1 from the centre of a straight segment: psi becomes
        // 0.5 * 0.05 = 0.025 and the offset 20 * sin(0.025) * 0.05 =
        // sin(0.025), i.e. delta = sin(0.025) / 4.
        let mut env = centered(0);
        let t = env.step(&ActionValue::Continuous(1.0)).unwrap();
        let v = t.next_state.values();
        assert!((v[0] - 0.025).abs() < 1e-15);
        assert!((v[1] - 0.025_f64.sin() / 4.0).abs() < 1e-15);
    }

    #[test]
    fn curvature_cycles_along_the_track() {
        assert_eq!(curvature_at(0.0), 0.0);
        assert_eq!(curvature_at(249.999), 0.0);
        assert_eq!(curvature_at(250.0), 0.01);
        assert_eq!(curvature_at(500.0), 0.0);
        assert_eq!(curvature_at(750.0), -0.01);
        // The pattern wraps every 1000 m.
        assert_eq!(curvature_at(1250.0), 0.01);

        // Driving 250 steps at 1 m per step changes the exported curvature.
        let mut env = centered(0);
        for _ in 0..249 {
            env.step(&ActionValue::Continuous(0.0)).unwrap();
        }
        assert_eq!(env.current_state().values()[2], 0.0);
        env.step(&ActionValue::Continuous(0.0)).unwrap();
        assert_eq!(env.current_state().values()[2], 0.01);
    }

    #[test]
    fn uncorrected_curve_pulls_the_car_off_centre() {
        let mut env = LaneKeep::from_seed(0);
        env.set_state(&FeatureState::new(
            vec![0.0, 0.0, 0.01, SPEED],
            &FEATURE_NAMES,
        ))
        .unwrap();
        // With no steering, a left-curving track swings the heading
        // negative and the offset follows.
        let t = env.step(&ActionValue::Continuous(0.0)).unwrap();
        assert!((t.next_state.values()[0] + 0.01).abs() < 1e-15);
        assert!(t.next_state.values()[1] < 0.0);
    }

    #[test]
    fn leaving_the_lane_pays_minus_200_once() {
        let mut env = LaneKeep::from_seed(0);
        env.set_state(&FeatureState::new(
            vec![0.5, 0.99, 0.0, SPEED],
            &FEATURE_NAMES,
        ))
        .unwrap();
        let t = env.step(&ActionValue::Continuous(1.0)).unwrap();
        assert!(t.failure);
        assert!(t.terminal);
        assert_eq!(t.reward, FAILURE_REWARD);
        assert!(t.next_state.values()[1].abs() >= 1.0);
    }

    #[test]
    fn out_of_range_actions_are_rejected() {
        let mut env = centered(0);
        for bad in [1.0001, -2.0, f64::NAN] {
            assert!(matches!(
                env.step(&ActionValue::Continuous(bad)),
                Err(EnvError::InvalidAction { .. })
            ));
        }
        assert!(matches!(
            env.step(&ActionValue::Discrete(0)),
            Err(EnvError::InvalidAction { .. })
        ));
    }

    /// Curvature feedforward plus proportional feedback on heading and
    /// offset; keeps the car centred through every segment.
    struct Centering;

    impl ActionSource for Centering {
        fn select(&mut self, s: &FeatureState, _rng: &mut dyn RngCore) -> ActionValue {
            let v = s.values();
            let feedforward = v[2] * SPEED / STEER_GAIN;
            let correction = 5.0 * (-0.5 * v[1] - v[0]);
            ActionValue::Continuous((feedforward + correction).clamp(-1.0, 1.0))
        }
    }

    #[test]
    fn good_driver_survives_the_full_episode() {
        let mut env = LaneKeep::from_seed(1234);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let log = run_episode(&mut env, &mut Centering, None, 100_000, &mut rng).unwrap();
        assert_eq!(log.len(), MAX_STEPS);
        assert_eq!(log.episode_reward, 0.0);
        let last = log.transitions.last().unwrap();
        assert!(last.terminal);
        assert!(!last.failure);
    }

    #[test]
    fn unp_rules_block_outward_steering_past_half_width() {
        let spec = unp_spec();
        let near_right = FeatureState::new(vec![0.0, 0.6, 0.0, SPEED], &FEATURE_NAMES);
        assert!(spec.is_unp(&near_right, &ActionValue::Continuous(0.3)));
        assert!(!spec.is_unp(&near_right, &ActionValue::Continuous(-0.3)));
        assert!(!spec.is_unp(&near_right, &ActionValue::Continuous(0.0)));

        let near_left = FeatureState::new(vec![0.0, -0.6, 0.0, SPEED], &FEATURE_NAMES);
        assert!(spec.is_unp(&near_left, &ActionValue::Continuous(-0.3)));
        assert!(!spec.is_unp(&near_left, &ActionValue::Continuous(0.3)));

        // Strict threshold: exactly half-width is still permissible.
        let at_half = FeatureState::new(vec![0.0, 0.5, 0.0, SPEED], &FEATURE_NAMES);
        assert!(!spec.is_unp(&at_half, &ActionValue::Continuous(1.0)));
    }

    #[test]
    fn set_state_maps_curvature_back_to_a_segment() {
        let mut env = LaneKeep::from_seed(0);
        for (kappa, expect_pos) in [(0.0, 0.0), (0.01, 250.0), (-0.01, 750.0)] {
            env.set_state(&FeatureState::new(
                vec![0.1, -0.2, kappa, SPEED],
                &FEATURE_NAMES,
            ))
            .unwrap();
            assert_eq!(env.track_pos, expect_pos);
            let s = env.current_state();
            assert_eq!(s.values()[2], kappa);
            assert!((s.values()[1] + 0.2).abs() < 1e-15);
        }
        // Unknown curvature or wrong speed are rejected.
        assert!(env
            .set_state(&FeatureState::new(vec![0.0, 0.0, 0.5, SPEED], &FEATURE_NAMES))
            .is_err());
        assert!(env
            .set_state(&FeatureState::new(vec![0.0, 0.0, 0.0, 19.0], &FEATURE_NAMES))
            .is_err());
    }

    #[test]
    fn same_seed_reproduces_trajectories_bitwise() {
        let mut a = LaneKeep::from_seed(3000);
        let mut b = LaneKeep::from_seed(3000);
        let mut actor_a = RandomPolicy::new(a.action_space());
        let mut actor_b = RandomPolicy::new(b.action_space());
        let mut ra = ChaCha8Rng::seed_from_u64(5);
        let mut rb = ChaCha8Rng::seed_from_u64(5);
        let la = run_episode(&mut a, &mut actor_a, None, 2000, &mut ra).unwrap();
        let lb = run_episode(&mut b, &mut actor_b, None, 2000, &mut rb).unwrap();
        assert_eq!(la, lb);
    }
}
