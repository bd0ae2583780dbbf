//! Development probe for lane-keeping training dynamics: runs one shielded
//! DDPG seed and prints per-episode actor outputs and critic action
//! preferences at a few contrasting states.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unprl_core::agents::{DdpgAgent, Hyperparameters};
use unprl_core::envs::{self, EnvKind};
use unprl_core::harness::{stream_rng, trailing_mean, STREAM_ENV, STREAM_INIT, STREAM_STEP};
use unprl_core::mdp::{run_episode, ActionFilter, FeatureState};

const NAMES: [&str; 4] = ["psi", "delta", "kappa", "v"];

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1234);
    let max_episodes: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(300);
    let shield_on: bool = args.get(3).map(|s| s != "none").unwrap_or(true);

    let kind = EnvKind::LaneKeep;
    let scale = if args.len() >= 8 {
        (4..8).map(|i| args[i].parse().unwrap()).collect()
    } else {
        envs::feature_scale(kind)
    };
    println!("scale {scale:?}");
    let mut env = envs::build_env(kind, stream_rng(seed, STREAM_ENV));
    let mut init = stream_rng(seed, STREAM_INIT);
    let mut agent = DdpgAgent::new(4, Hyperparameters::lanekeep(), scale.clone(), &mut init).unwrap();
    let mut step_rng = stream_rng(seed, STREAM_STEP);
    let mut filter: Option<Box<dyn ActionFilter>> = if shield_on {
        Some(Box::new(envs::shield(kind)))
    } else {
        None
    };

    // ψ, δ, κ, v probes: centre straight, right-half drifting right,
    // left-half drifting left, entry of each curve direction.
    let probes = [
        ("centre", vec![0.0, 0.0, 0.0, 20.0]),
        ("right-drift", vec![0.1, 0.6, 0.0, 20.0]),
        ("left-drift", vec![-0.1, -0.6, 0.0, 20.0]),
        ("curve+", vec![0.0, 0.0, 0.01, 20.0]),
        ("curve-", vec![0.0, 0.0, -0.01, 20.0]),
    ];

    let mut rewards = Vec::new();
    let mut total_steps = 0usize;
    let mut total_unsafe = 0u64;
    println!("seed {seed}, shield {}", if shield_on { "unp" } else { "none" });
    for ep in 1..=max_episodes {
        let log = run_episode(
            env.as_mut(),
            &mut agent,
            filter.as_deref_mut(),
            5000,
            &mut step_rng,
        )
        .unwrap();
        total_steps += log.len();
        total_unsafe += log.unsafe_count();
        rewards.push(log.episode_reward);

        let mut line = format!(
            "ep {ep:3} steps {:4} r {:6.1} iv {:4} noise {:.3}",
            log.len(),
            log.episode_reward,
            log.intervention_count(),
            agent.noise_scale()
        );
        for (label, raw) in &probes {
            let s = FeatureState::new(raw.clone(), &NAMES);
            let a = agent.policy_action(&s).scalar().unwrap();
            let sc: Vec<f64> = raw.iter().zip(&scale).map(|(v, d)| v / d).collect();
            let q_lo = agent.critic().q_value(&sc, -0.5).unwrap();
            let q_hi = agent.critic().q_value(&sc, 0.5).unwrap();
            line += &format!(" | {label} a={a:+.2} dq={:+.1}", q_hi - q_lo);
        }
        println!("{line}");

        if trailing_mean(&rewards, 10).is_some_and(|m| m >= 0.0) {
            println!("CONVERGED at episode {ep} (total steps {total_steps}, unsafe {total_unsafe})");
            return;
        }
        if total_steps > 600_000 {
            println!("step budget exhausted at episode {ep}");
            break;
        }
    }
    println!(
        "did not converge in {max_episodes} episodes (total steps {total_steps}, unsafe {total_unsafe})"
    );
}
