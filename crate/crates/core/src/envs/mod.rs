//! The three benchmark environments and the per-environment wiring
//! (shields, lookahead configs, feature scaling, audit grids) the harness
//! and validators need.

pub mod cartpole;
pub mod flappy;
pub mod lanekeep;

pub use cartpole::CartPole;
pub use flappy::FlappyBird;
pub use lanekeep::LaneKeep;

use rand_chacha::ChaCha8Rng;

use crate::mbs::MbsConfig;
use crate::mdp::{ActionValue, Environment, FeatureState};
use crate::shield::Shield;

/// Identifies one of the shipped environments; the unit most of the crate's
/// per-environment lookups key on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvKind {
    CartPole,
    LaneKeep,
    FlappyBird,
}

impl EnvKind {
    pub const ALL: [EnvKind; 3] = [EnvKind::CartPole, EnvKind::LaneKeep, EnvKind::FlappyBird];

    pub fn name(&self) -> &'static str {
        match self {
            EnvKind::CartPole => "cartpole",
            EnvKind::LaneKeep => "lanekeep",
            EnvKind::FlappyBird => "flappybird",
        }
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EnvKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cartpole" => Ok(EnvKind::CartPole),
            "lanekeep" => Ok(EnvKind::LaneKeep),
            "flappybird" => Ok(EnvKind::FlappyBird),
            other => Err(format!(
                "unknown environment '{other}' (expected cartpole, lanekeep, or flappybird)"
            )),
        }
    }
}

/// Builds an environment around a caller-provided generator, the only
/// source of randomness it will ever use.
pub fn build_env(kind: EnvKind, rng: ChaCha8Rng) -> Box<dyn Environment> {
    match kind {
        EnvKind::CartPole => Box::new(CartPole::new(rng)),
        EnvKind::LaneKeep => Box::new(LaneKeep::new(rng)),
        EnvKind::FlappyBird => Box::new(FlappyBird::new(rng)),
    }
}

/// The shield an environment ships with: its non-permissibility rules plus
/// the matching backup policy.
pub fn shield(kind: EnvKind) -> Shield {
    match kind {
        EnvKind::CartPole => Shield::new(
            cartpole::unp_spec(),
            crate::shield::BackupPolicy::OtherDiscrete,
        ),
        EnvKind::LaneKeep => Shield::new(
            lanekeep::unp_spec(),
            crate::shield::BackupPolicy::NegateContinuous,
        ),
        EnvKind::FlappyBird => Shield::new(
            flappy::unp_spec(),
            crate::shield::BackupPolicy::OtherDiscrete,
        ),
    }
}

/// Depth-limited lookahead configuration: depth 3, five action samples per
/// level for continuous spaces, and the environment's notion of a safe
/// state.
pub fn mbs_config(kind: EnvKind) -> MbsConfig {
    let safe_state: crate::shield::StatePredicate = match kind {
        EnvKind::CartPole => |s| {
            s.values()[2].abs() < cartpole::THETA_LIMIT && s.values()[0].abs() < cartpole::X_LIMIT
        },
        EnvKind::LaneKeep => |s| s.values()[1].abs() < 1.0,
        // The bird has no hard vertical bound, so "safe" caps how far it may
        // stray from the playing field.
        EnvKind::FlappyBird => |s| s.values()[0].abs() <= 300.0,
    };
    MbsConfig {
        depth: 3,
        branch: 5,
        safe_state,
    }
}

/// Per-feature divisors applied before states reach a network. The
/// divisors are tuned per task: features the policy must react to sharply
/// (pole angle, heading, road curvature) are placed a few times above unit
/// scale, which measurably speeds value learning under the fixed plain-SGD
/// optimizer. Physical units are preserved everywhere else.
pub fn feature_scale(kind: EnvKind) -> Vec<f64> {
    match kind {
        EnvKind::CartPole => vec![cartpole::X_LIMIT, 3.0, cartpole::DANGER_THETA, 1.5],
        EnvKind::LaneKeep => vec![0.2, 0.25, 0.002, lanekeep::SPEED],
        EnvKind::FlappyBird => vec![100.0, 10.0, 100.0, 100.0, 100.0],
    }
}

/// Hard per-episode step bound handed to the episode loop. Cart-pole and
/// lane keeping terminate themselves at exactly this count; flappy ends on
/// accumulated reward well before the bound.
pub fn episode_step_cap(kind: EnvKind) -> usize {
    match kind {
        EnvKind::CartPole => cartpole::MAX_STEPS,
        EnvKind::LaneKeep => lanekeep::MAX_STEPS,
        EnvKind::FlappyBird => 20_000,
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// A dense grid over and around the danger regions, paired with the action
/// set to sweep; used to audit that the backup action is permissible
/// everywhere the shield might have to play it. Each grid has more than
/// ten thousand states.
pub fn danger_grid(kind: EnvKind) -> (Vec<FeatureState>, Vec<ActionValue>) {
    match kind {
        EnvKind::CartPole => {
            let mut states = Vec::new();
            for &x in &[-2.0, 0.0, 2.0] {
                for &x_dot in &[-1.0, 0.0, 1.0] {
                    for theta in linspace(-0.25, 0.25, 41) {
                        for theta_dot in linspace(-3.0, 3.0, 31) {
                            states.push(FeatureState::new(
                                vec![x, x_dot, theta, theta_dot],
                                &cartpole::FEATURE_NAMES,
                            ));
                        }
                    }
                }
            }
            let actions = vec![ActionValue::Discrete(0), ActionValue::Discrete(1)];
            (states, actions)
        }
        EnvKind::LaneKeep => {
            let mut states = Vec::new();
            for &kappa in &[0.0, 0.01, -0.01] {
                for psi in linspace(-1.0, 1.0, 41) {
                    for delta in linspace(-1.5, 1.5, 101) {
                        states.push(FeatureState::new(
                            vec![psi, delta, kappa, lanekeep::SPEED],
                            &lanekeep::FEATURE_NAMES,
                        ));
                    }
                }
            }
            let actions = linspace(-1.0, 1.0, 21)
                .into_iter()
                .map(ActionValue::Continuous)
                .collect();
            (states, actions)
        }
        EnvKind::FlappyBird => {
            let mut states = Vec::new();
            for &v_y in &[-10.0, 0.0, 10.0] {
                for &x_dist in &[20.0, 80.0, 140.0] {
                    for y_lpipe in linspace(-50.0, 150.0, 21) {
                        for y_bird in linspace(-150.0, 350.0, 56) {
                            states.push(FeatureState::new(
                                vec![y_bird, v_y, x_dist, y_lpipe, y_lpipe + flappy::GAP_HEIGHT],
                                &flappy::FEATURE_NAMES,
                            ));
                        }
                    }
                }
            }
            let actions = vec![ActionValue::Discrete(0), ActionValue::Discrete(1)];
            (states, actions)
        }
    }
}

/// Probe states for the failure/reward audit: grids that straddle the
/// failure boundaries so both failing and surviving steps are exercised,
/// including (for flappy) steps where a pipe crossing resolves.
pub fn validation_probes(kind: EnvKind) -> Vec<FeatureState> {
    match kind {
        EnvKind::CartPole => {
            let mut probes = Vec::new();
            for theta in linspace(-0.22, 0.22, 15) {
                for x in linspace(-2.5, 2.5, 15) {
                    for &theta_dot in &[-3.0, 0.0, 3.0] {
                        probes.push(FeatureState::new(
                            vec![x, 0.0, theta, theta_dot],
                            &cartpole::FEATURE_NAMES,
                        ));
                    }
                }
            }
            probes
        }
        EnvKind::LaneKeep => {
            let mut probes = Vec::new();
            for &kappa in &[0.0, 0.01, -0.01] {
                for psi in linspace(-0.6, 0.6, 13) {
                    for delta in linspace(-1.1, 1.1, 23) {
                        probes.push(FeatureState::new(
                            vec![psi, delta, kappa, lanekeep::SPEED],
                            &lanekeep::FEATURE_NAMES,
                        ));
                    }
                }
            }
            probes
        }
        EnvKind::FlappyBird => {
            let mut probes = Vec::new();
            for &x_dist in &[4.0, 8.0, 80.0] {
                for &v_y in &[-5.0, 0.0, 5.0] {
                    for y_lpipe in linspace(-50.0, 150.0, 11) {
                        for y_bird in linspace(-100.0, 300.0, 21) {
                            probes.push(FeatureState::new(
                                vec![y_bird, v_y, x_dist, y_lpipe, y_lpipe + flappy::GAP_HEIGHT],
                                &flappy::FEATURE_NAMES,
                            ));
                        }
                    }
                }
            }
            probes
        }
    }
}
