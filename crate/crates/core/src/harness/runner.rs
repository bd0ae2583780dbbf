//! Seeded experiment execution: one learner per seed, episode-level
//! bookkeeping, convergence detection, and cross-seed aggregation.
//!
//! Each seed fans out into independent ChaCha streams (environment draws,
//! network initialization, step-time draws, evaluation), so a run is a pure
//! function of its seed and configuration — repeating it reproduces every
//! number bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, ShieldMode};
use super::HarnessError;
use crate::agents::ddqn::argmax;
use crate::agents::{scale_features, DdpgAgent, DdqnAgent, DeterministicDdpg, GreedyDdqn};
use crate::envs::{self, EnvKind};
use crate::mbs::MbsShield;
use crate::mdp::{
    run_episode, ActionFilter, ActionSource, ActionSpace, ActionValue, EpisodeLog, FeatureState,
    Transition,
};
use crate::nn::Mlp;

/// Stream indices of the per-seed generators: environment draws, network
/// initialization, step-time draws (exploration and replay sampling), and
/// post-training evaluation. The evaluation episode gets its own
/// environment stream so a saved policy replays it exactly.
pub const STREAM_ENV: u64 = 0;
pub const STREAM_INIT: u64 = 1;
pub const STREAM_STEP: u64 = 2;
pub const STREAM_EVAL: u64 = 3;
pub const STREAM_EVAL_ENV: u64 = 4;

/// One of a seed's independent generators.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The learner matching an environment's action space: double DQN for the
/// discrete tasks, DDPG for continuous steering.
pub enum Learner {
    Ddqn(DdqnAgent),
    Ddpg(DdpgAgent),
}

impl Learner {
    /// Hidden layer widths of the Q-network for a discrete task.
    pub fn q_hidden(kind: EnvKind) -> &'static [usize] {
        match kind {
            EnvKind::CartPole => &[16, 32],
            EnvKind::LaneKeep | EnvKind::FlappyBird => &[64, 64],
        }
    }

    pub fn for_env(
        kind: EnvKind,
        hp: crate::agents::Hyperparameters,
        rng: &mut dyn rand::RngCore,
    ) -> Result<Self, HarnessError> {
        let scale = envs::feature_scale(kind);
        let dim = scale.len();
        let space = envs::build_env(kind, ChaCha8Rng::seed_from_u64(0)).action_space();
        match space {
            ActionSpace::Discrete { count } => Ok(Learner::Ddqn(DdqnAgent::new(
                dim,
                Self::q_hidden(kind),
                count,
                hp,
                scale,
                rng,
            )?)),
            ActionSpace::Continuous { .. } => {
                Ok(Learner::Ddpg(DdpgAgent::new(dim, hp, scale, rng)?))
            }
        }
    }

    /// The network that defines the deployable policy: the online Q-network
    /// or the actor.
    pub fn policy_net(&self) -> &Mlp {
        match self {
            Learner::Ddqn(agent) => agent.online(),
            Learner::Ddpg(agent) => agent.actor(),
        }
    }
}

impl ActionSource for Learner {
    fn select(&mut self, state: &FeatureState, rng: &mut dyn rand::RngCore) -> ActionValue {
        match self {
            Learner::Ddqn(agent) => agent.select(state, rng),
            Learner::Ddpg(agent) => agent.select(state, rng),
        }
    }

    fn observe(&mut self, transition: &Transition, rng: &mut dyn rand::RngCore) {
        match self {
            Learner::Ddqn(agent) => agent.observe(transition, rng),
            Learner::Ddpg(agent) => agent.observe(transition, rng),
        }
    }
}

/// A trained policy reloaded from a network snapshot: feature scaling plus
/// either a greedy argmax (discrete) or a clipped scalar output
/// (continuous). Lets the CLI replay traces without the training state.
pub struct SnapshotPolicy {
    net: Mlp,
    scale: Vec<f64>,
    discrete: bool,
}

impl SnapshotPolicy {
    pub fn for_env(kind: EnvKind, net: Mlp) -> Result<Self, HarnessError> {
        let scale = envs::feature_scale(kind);
        if net.input_dim() != scale.len() {
            return Err(HarnessError::PolicyMismatch {
                env: kind,
                reason: format!(
                    "network takes {} inputs but the task has {} features",
                    net.input_dim(),
                    scale.len()
                ),
            });
        }
        let space = envs::build_env(kind, ChaCha8Rng::seed_from_u64(0)).action_space();
        let (discrete, expected_out) = match space {
            ActionSpace::Discrete { count } => (true, count),
            ActionSpace::Continuous { .. } => (false, 1),
        };
        if net.output_dim() != expected_out {
            return Err(HarnessError::PolicyMismatch {
                env: kind,
                reason: format!(
                    "network emits {} outputs but the task needs {}",
                    net.output_dim(),
                    expected_out
                ),
            });
        }
        Ok(Self {
            net,
            scale,
            discrete,
        })
    }
}

impl ActionSource for SnapshotPolicy {
    fn select(&mut self, state: &FeatureState, _rng: &mut dyn rand::RngCore) -> ActionValue {
        let scaled = scale_features(state.values(), &self.scale);
        let out = self.net.forward(&scaled).expect("validated at construction");
        if self.discrete {
            ActionValue::Discrete(argmax(&out))
        } else {
            ActionValue::Continuous(out[0].clamp(-1.0, 1.0))
        }
    }
}

/// One training episode's bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    /// 1-based episode number.
    pub episode: usize,
    pub reward: f64,
    pub steps: usize,
    /// Executed actions that the environment's own rules mark unsafe or
    /// non-permissible, audited independently of any shield.
    pub unsafe_actions: u64,
    /// Steps where a filter replaced the proposed action.
    pub interventions: u64,
}

/// Everything one seed produced.
pub struct RunResult {
    pub seed: u64,
    pub episodes: Vec<EpisodeRecord>,
    /// First 1-based episode at which the trailing-window mean reached the
    /// configured threshold; `None` if the run never converged.
    pub converged_at: Option<usize>,
    /// A post-training evaluation episode under the deterministic policy
    /// (same shield mode as training).
    pub trace: EpisodeLog,
    /// The deployable policy network (online Q-network or actor).
    pub policy: Mlp,
}

impl RunResult {
    pub fn total_unsafe(&self) -> u64 {
        self.episodes.iter().map(|e| e.unsafe_actions).sum()
    }

    pub fn total_interventions(&self) -> u64 {
        self.episodes.iter().map(|e| e.interventions).sum()
    }
}

/// Per-episode reward statistics across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub episode: usize,
    pub mean: f64,
    pub std: f64,
}

pub struct ExperimentResult {
    pub env: EnvKind,
    pub shield_mode: ShieldMode,
    pub runs: Vec<RunResult>,
    pub curve: Vec<CurvePoint>,
}

/// The action filter a shield mode stands for, ready to hand to
/// [`run_episode`].
pub fn build_filter(kind: EnvKind, mode: ShieldMode) -> Option<Box<dyn ActionFilter>> {
    match mode {
        ShieldMode::None => None,
        ShieldMode::Unp => Some(Box::new(envs::shield(kind))),
        ShieldMode::Mbs => Some(Box::new(MbsShield::new(envs::mbs_config(kind)))),
    }
}

/// Mean of the last `window` entries, once that many exist.
pub fn trailing_mean(rewards: &[f64], window: usize) -> Option<f64> {
    if window == 0 || rewards.len() < window {
        return None;
    }
    Some(rewards[rewards.len() - window..].iter().sum::<f64>() / window as f64)
}

/// Trains one seed to convergence or the episode cap, then records an
/// evaluation trace under the deterministic policy.
pub fn run_single(config: &ExperimentConfig, seed: u64) -> Result<RunResult, HarnessError> {
    let mut env = envs::build_env(config.env, stream_rng(seed, STREAM_ENV));
    let mut init_rng = stream_rng(seed, STREAM_INIT);
    let mut agent = Learner::for_env(config.env, config.hp.clone(), &mut init_rng)?;
    let mut step_rng = stream_rng(seed, STREAM_STEP);
    let mut filter = build_filter(config.env, config.shield_mode);
    let step_cap = envs::episode_step_cap(config.env);

    let mut episodes = Vec::new();
    let mut rewards = Vec::new();
    let mut converged_at = None;
    for episode in 1..=config.max_episodes {
        let log = run_episode(
            env.as_mut(),
            &mut agent,
            filter.as_deref_mut(),
            step_cap,
            &mut step_rng,
        )?;
        rewards.push(log.episode_reward);
        episodes.push(EpisodeRecord {
            episode,
            reward: log.episode_reward,
            steps: log.len(),
            unsafe_actions: log.unsafe_count(),
            interventions: log.intervention_count(),
        });
        if converged_at.is_none()
            && trailing_mean(&rewards, config.convergence_window)
                .is_some_and(|m| m >= config.convergence_threshold)
        {
            converged_at = Some(episode);
            if config.stop_on_convergence {
                break;
            }
        }
    }

    // The evaluation episode runs on a fresh environment stream, so a
    // reloaded policy snapshot reproduces this exact trace later.
    let mut eval_env = envs::build_env(config.env, stream_rng(seed, STREAM_EVAL_ENV));
    let mut eval_rng = stream_rng(seed, STREAM_EVAL);
    let trace = match &agent {
        Learner::Ddqn(a) => run_episode(
            eval_env.as_mut(),
            &mut GreedyDdqn(a),
            filter.as_deref_mut(),
            step_cap,
            &mut eval_rng,
        )?,
        Learner::Ddpg(a) => run_episode(
            eval_env.as_mut(),
            &mut DeterministicDdpg(a),
            filter.as_deref_mut(),
            step_cap,
            &mut eval_rng,
        )?,
    };

    Ok(RunResult {
        seed,
        episodes,
        converged_at,
        trace,
        policy: agent.policy_net().clone(),
    })
}

/// Runs every seed (in parallel where cores allow) and aggregates the
/// learning curves.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    config.validate()?;
    let runs = config
        .seeds
        .par_iter()
        .map(|&seed| run_single(config, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let curve = aggregate(&runs);
    Ok(ExperimentResult {
        env: config.env,
        shield_mode: config.shield_mode,
        runs,
        curve,
    })
}

/// Per-episode mean and population standard deviation across runs,
/// truncated to the shortest run so every point covers every seed.
pub fn aggregate(runs: &[RunResult]) -> Vec<CurvePoint> {
    let shortest = runs.iter().map(|r| r.episodes.len()).min().unwrap_or(0);
    (0..shortest)
        .map(|i| {
            let values: Vec<f64> = runs.iter().map(|r| r.episodes[i].reward).collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let var =
                values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
            CurvePoint {
                episode: i + 1,
                mean,
                std: var.sqrt(),
            }
        })
        .collect()
}
