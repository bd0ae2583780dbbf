//! Shared fixtures for the benchmarks: experiment-sized networks and
//! agents with pre-filled replay buffers, ready to time a single training
//! step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use unprl_core::agents::Hyperparameters;
use unprl_core::envs::EnvKind;
use unprl_core::mdp::{ActionSource, ActionValue, FeatureState, Transition};
use unprl_core::nn::{Activation, Mlp};
use unprl_core::{DdpgAgent, DdqnAgent};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The cart-pole Q-network shape: 4 inputs, relu hidden layers 16 and 32,
/// 2 outputs.
pub fn cartpole_net(seed: u64) -> Mlp {
    Mlp::new(
        4,
        &[
            (16, Activation::Relu),
            (32, Activation::Relu),
            (2, Activation::Identity),
        ],
        &mut rng(seed),
    )
    .unwrap()
}

static CP: [&str; 4] = ["x", "x_dot", "theta", "theta_dot"];

fn cp_state(i: usize) -> FeatureState {
    let t = i as f64 * 0.01;
    FeatureState::new(vec![t.sin(), t.cos(), 0.05 * t.sin(), -0.05 * t.cos()], &CP)
}

/// A DDQN agent whose buffer already holds enough experience to train.
pub fn filled_ddqn() -> DdqnAgent {
    let mut hp = Hyperparameters::for_env(EnvKind::CartPole);
    hp.exploration_steps = 0;
    let mut agent = DdqnAgent::new(4, &[16, 32], 2, hp, vec![1.0; 4], &mut rng(1)).unwrap();
    let mut r = rng(2);
    for i in 0..256 {
        let t = Transition::new(
            cp_state(i),
            ActionValue::Discrete(i % 2),
            1.0,
            cp_state(i + 1),
            i % 37 == 36,
            false,
        );
        agent.observe(&t, &mut r);
    }
    agent
}

/// A DDPG agent whose buffer already holds enough experience to train.
pub fn filled_ddpg() -> DdpgAgent {
    let mut hp = Hyperparameters::for_env(EnvKind::LaneKeep);
    hp.exploration_steps = 0;
    let mut agent = DdpgAgent::new(4, hp, vec![1.0; 4], &mut rng(3)).unwrap();
    let mut r = rng(4);
    for i in 0..256 {
        let t = Transition::new(
            cp_state(i),
            ActionValue::Continuous(((i % 21) as f64 - 10.0) / 10.0),
            -0.1,
            cp_state(i + 1),
            i % 37 == 36,
            false,
        );
        agent.observe(&t, &mut r);
    }
    agent
}
