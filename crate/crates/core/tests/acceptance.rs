//! Release gates: end-to-end checks of the headline guarantees. Shielded
//! training must never execute a non-permissible action, backup
//! substitution must be safe across dense state grids, shielding must beat
//! unshielded training to convergence on every task, the depth-limited
//! lookahead baseline must exhibit its blind spot, gradients and bootstrap
//! targets must be numerically right, the failure/reward contract must
//! hold (and its validator must catch a planted violation), and repeated
//! runs must be bit-identical.
//!
//! Each `gate_*` test prints one summary line with the measured numbers
//! (visible with `--nocapture`) and carries the same numbers in its panic
//! message when the gate does not hold. The convergence gates retrain
//! every arm from scratch at full experiment scale, so the complete suite
//! is a long run: expect a couple of hours on one core.

use std::sync::LazyLock;
use std::time::Instant;

use ndarray::array;
use unprl_core::agents::ddqn_target;
use unprl_core::envs;
use unprl_core::harness::output::write_runs_csv;
use unprl_core::harness::{
    run_experiment, stream_rng, ExperimentConfig, ExperimentResult, Learner, ShieldMode,
    STREAM_ENV, STREAM_INIT, STREAM_STEP,
};
use unprl_core::mbs::{mbs_filter, MbsConfig};
use unprl_core::nn::Layer;
use unprl_core::shield::{check_backup_safety, validate_assumption1};
use unprl_core::{
    build_env, run_episode, ActionSpace, ActionValue, Activation, BackupPolicy, DdqnAgent,
    EnvKind, Environment, FeatureState, Hyperparameters, Mlp, Transition, UnpSpec,
};

/// Seed sets for the seed sweeps; one fixed list per task family.
const CARTPOLE_LANEKEEP_SEEDS: [u64; 5] = [1234, 2000, 3000, 3456, 4500];
const FLAPPY_SEEDS: [u64; 5] = [1234, 1500, 2222, 3456, 5000];

/// A matched pair of experiment arms: the same task, seeds, and episode
/// cap, trained once with the permissibility shield and once bare.
struct ArmPair {
    unp: ExperimentResult,
    none: ExperimentResult,
    cap: usize,
}

fn train_pair(kind: EnvKind, seeds: &[u64], cap: usize) -> ArmPair {
    let mut template = ExperimentConfig::for_env(kind);
    template.seeds = seeds.to_vec();
    template.max_episodes = cap;
    let mut unp_cfg = template.clone();
    unp_cfg.shield_mode = ShieldMode::Unp;
    let mut none_cfg = template;
    none_cfg.shield_mode = ShieldMode::None;
    ArmPair {
        unp: run_experiment(&unp_cfg).expect("shielded arm"),
        none: run_experiment(&none_cfg).expect("unshielded arm"),
        cap,
    }
}

static CARTPOLE: LazyLock<ArmPair> =
    LazyLock::new(|| train_pair(EnvKind::CartPole, &CARTPOLE_LANEKEEP_SEEDS, 1500));
static LANEKEEP: LazyLock<ArmPair> =
    LazyLock::new(|| train_pair(EnvKind::LaneKeep, &CARTPOLE_LANEKEEP_SEEDS, 100));
static FLAPPY: LazyLock<ArmPair> =
    LazyLock::new(|| train_pair(EnvKind::FlappyBird, &FLAPPY_SEEDS, 2000));

/// Episodes to convergence for each run in an arm. A run that never
/// converged counts as one past the cap so ordering comparisons stay
/// well-defined (and can never flatter the non-converged arm).
fn convergence_episodes(arm: &ExperimentResult, cap: usize) -> Vec<usize> {
    arm.runs
        .iter()
        .map(|r| r.converged_at.unwrap_or(cap + 1))
        .collect()
}

fn mean(xs: &[usize]) -> f64 {
    xs.iter().sum::<usize>() as f64 / xs.len() as f64
}

#[test]
fn gate_01_shielded_training_never_executes_an_unsafe_action() {
    let mut episodes = 0usize;
    let mut unsafe_total = 0u64;
    for arm in [&*CARTPOLE, &*LANEKEEP, &*FLAPPY] {
        for run in &arm.unp.runs {
            episodes += run.episodes.len();
            unsafe_total += run.total_unsafe();
            unsafe_total += run.trace.unsafe_executed.iter().filter(|&&u| u).count() as u64;
        }
    }
    println!(
        "[gate 01] {unsafe_total} unsafe executions across {episodes} shielded training \
         episodes plus evaluation traces (three tasks, five seeds each)"
    );
    assert_eq!(
        unsafe_total, 0,
        "shielded runs must never execute a non-permissible action \
         (found {unsafe_total} across {episodes} episodes)"
    );
}

#[test]
fn gate_02_backup_substitution_is_safe_on_dense_grids() {
    let mut line = String::new();
    for kind in [EnvKind::CartPole, EnvKind::LaneKeep, EnvKind::FlappyBird] {
        let started = Instant::now();
        let env = build_env(kind, stream_rng(0, STREAM_ENV));
        let (states, actions) = envs::danger_grid(kind);
        let state_count = states.len();
        let report = check_backup_safety(env.unp_spec(), env.backup_policy(), states, &actions)
            .expect("backup grid sweep");
        let secs = started.elapsed().as_secs_f64();
        line += &format!(
            "{kind} {} states / {} pairs / {} violations in {secs:.1}s; ",
            report.states, report.pairs_checked, report.violation_count
        );
        assert!(
            state_count >= 10_000,
            "{kind}: the audit grid must cover at least ten thousand states (got {state_count})"
        );
        assert!(
            report.passed(),
            "{kind}: every blocked action must have a permissible backup \
             ({} violations over {} pairs)",
            report.violation_count,
            report.pairs_checked
        );
        assert!(
            secs < 60.0,
            "{kind}: the grid sweep must finish within a minute (took {secs:.1}s)"
        );
    }
    println!("[gate 02] {line}");
}

#[test]
fn gate_03_cartpole_shield_converges_fast_and_first() {
    let pair = &*CARTPOLE;
    let unp = convergence_episodes(&pair.unp, pair.cap);
    let none = convergence_episodes(&pair.none, pair.cap);
    let (mu, mn) = (mean(&unp), mean(&none));
    println!(
        "[gate 03] cartpole episodes to convergence (cap {}, non-converged = cap+1): \
         shielded {unp:?} mean {mu:.1}, unshielded {none:?} mean {mn:.1}",
        pair.cap
    );
    assert!(
        mu < mn,
        "the shielded cart-pole learner must converge in strictly fewer episodes \
         on the five-seed mean (shielded {mu:.1}, unshielded {mn:.1})"
    );
    assert!(
        mu <= 300.0,
        "the shielded cart-pole learner must reach the 200-reward threshold within \
         300 episodes on the five-seed mean (got {mu:.1})"
    );
}

#[test]
fn gate_04_lanekeep_shield_converges_fast_and_first() {
    let pair = &*LANEKEEP;
    let unp = convergence_episodes(&pair.unp, pair.cap);
    let none = convergence_episodes(&pair.none, pair.cap);
    let (mu, mn) = (mean(&unp), mean(&none));
    println!(
        "[gate 04] lanekeep episodes to convergence (cap {}, non-converged = cap+1): \
         shielded {unp:?} mean {mu:.1}, unshielded {none:?} mean {mn:.1}",
        pair.cap
    );
    assert!(
        mu < mn,
        "the shielded lane-keeping learner must converge in strictly fewer episodes \
         on the five-seed mean (shielded {mu:.1}, unshielded {mn:.1})"
    );
    assert!(
        mu <= 100.0,
        "the shielded lane-keeping learner must reach ten failure-free episodes within \
         100 episodes on the five-seed mean (got {mu:.1})"
    );
}

#[test]
fn gate_05_flappybird_shield_converges_first() {
    let pair = &*FLAPPY;
    let unp = convergence_episodes(&pair.unp, pair.cap);
    let none = convergence_episodes(&pair.none, pair.cap);
    let (mu, mn) = (mean(&unp), mean(&none));
    println!(
        "[gate 05] flappybird episodes to convergence (cap {}, non-converged = cap+1): \
         shielded {unp:?} mean {mu:.1}, unshielded {none:?} mean {mn:.1}",
        pair.cap
    );
    assert!(
        mu < mn,
        "the shielded flappy-bird learner must converge in strictly fewer episodes \
         on the five-seed mean (shielded {mu:.1}, unshielded {mn:.1})"
    );
}

#[test]
fn gate_06_depth_limited_lookahead_accepts_a_doomed_action() {
    const SEED: u64 = 1234;
    const EPISODES: usize = 8;
    let kind = EnvKind::CartPole;

    // A short shielded training run under the lookahead filter, keeping the
    // full step logs so every accepted action can be audited after the fact.
    let mut env = build_env(kind, stream_rng(SEED, STREAM_ENV));
    let mut init = stream_rng(SEED, STREAM_INIT);
    let mut agent = DdqnAgent::new(
        4,
        Learner::q_hidden(kind),
        2,
        Hyperparameters::for_env(kind),
        envs::feature_scale(kind),
        &mut init,
    )
    .expect("cartpole learner");
    let mut shield = unprl_core::MbsShield::new(envs::mbs_config(kind));
    let mut step_rng = stream_rng(SEED, STREAM_STEP);
    let mut logs = Vec::new();
    for _ in 0..EPISODES {
        logs.push(
            run_episode(
                env.as_mut(),
                &mut agent,
                Some(&mut shield),
                envs::episode_step_cap(kind),
                &mut step_rng,
            )
            .expect("shielded episode"),
        );
    }

    // Audit: find a step whose executed action the depth-limited filter
    // accepts, while an exhaustive exact rollout over every action sequence
    // shows that all continuations fail within ten steps. Discrete action
    // spaces are enumerated exhaustively at every level, so the deep filter
    // is an exact oracle here, not a sample.
    let shallow = envs::mbs_config(kind);
    let deep = MbsConfig { depth: 10, ..shallow };
    let mut probe = build_env(kind, stream_rng(SEED, STREAM_ENV));
    let mut accepted = 0usize;
    let mut witness = None;
    'search: for log in &logs {
        for t in &log.transitions {
            probe.set_state(&t.state).expect("replaying a logged state");
            if !mbs_filter(probe.as_ref(), &t.action, &shallow) {
                continue; // executed via the no-safe-option path, not accepted
            }
            accepted += 1;
            probe.set_state(&t.state).expect("replaying a logged state");
            if !mbs_filter(probe.as_ref(), &t.action, &deep) {
                witness = Some((t.state.clone(), t.action));
                break 'search;
            }
        }
    }
    match witness {
        Some((state, action)) => {
            println!(
                "[gate 06] lookahead blind spot after auditing {accepted} accepted steps: \
                 depth-{} accepts {action:?} at {state:?} although every continuation \
                 fails within {} steps",
                shallow.depth, deep.depth
            );
        }
        None => panic!(
            "expected the depth-{} filter to accept at least one action that an \
             exhaustive {}-step rollout proves doomed, but all {accepted} accepted \
             steps over {EPISODES} episodes were recoverable",
            shallow.depth, deep.depth
        ),
    }
}

#[test]
fn gate_07_analytic_gradients_match_finite_differences() {
    const PROBES: usize = 100;
    const TOL: f64 = 1e-4;
    const LINEAR_TOL: f64 = 1e-8;
    let mut init = stream_rng(7, 100);
    let mut probe = stream_rng(7, 101);
    let mut line = String::new();
    let mut worst: f64 = 0.0;

    let relu_archs: [(&str, usize, &[usize], Activation); 3] = [
        ("cartpole q-network", 4, Learner::q_hidden(EnvKind::CartPole), Activation::Identity),
        ("flappybird q-network", 5, Learner::q_hidden(EnvKind::FlappyBird), Activation::Identity),
        ("lanekeep actor", 4, &[128, 256], Activation::Tanh),
    ];
    for (label, dim, hidden, head) in relu_archs {
        let mut arch: Vec<(usize, Activation)> =
            hidden.iter().map(|&w| (w, Activation::Relu)).collect();
        let out = if head == Activation::Tanh { 1 } else { 2 };
        arch.push((out, head));
        let net = Mlp::new(dim, &arch, &mut init).expect("network");
        let input: Vec<f64> = (0..dim).map(|i| 0.3 - 0.15 * i as f64).collect();
        let err = net
            .finite_diff_check(&input, PROBES, &mut probe)
            .expect("finite differences");
        line += &format!("{label} {err:.2e}; ");
        worst = worst.max(err);
        assert!(
            err < TOL,
            "{label}: max relative gradient error {err:.3e} exceeds {TOL:.0e} \
             over {PROBES} probes"
        );
    }

    let critic =
        unprl_core::BranchedCritic::new(4, &mut init).expect("branched critic");
    let err = critic
        .finite_diff_check(&[0.2, -0.4, 0.1, 0.6], 0.35, PROBES, &mut probe)
        .expect("finite differences");
    line += &format!("lanekeep critic {err:.2e}; ");
    worst = worst.max(err);
    assert!(
        err < TOL,
        "lanekeep critic: max relative gradient error {err:.3e} exceeds {TOL:.0e} \
         over {PROBES} probes"
    );

    // A purely linear network has no curvature, so central differences are
    // exact up to rounding; this pins the machinery itself. The layer holds
    // exactly one hundred parameters, one probe each.
    let linear = Mlp::new(9, &[(10, Activation::Identity)], &mut init).expect("linear network");
    let linear_err = linear
        .finite_diff_check(
            &[0.5, -1.0, 0.25, 2.0, -0.75, 0.1, 1.5, -0.3, 0.8],
            PROBES,
            &mut probe,
        )
        .expect("finite differences");
    println!("[gate 07] max relative gradient error: {line}linear {linear_err:.2e} (worst nonlinear {worst:.2e})");
    assert!(
        linear_err < LINEAR_TOL,
        "linear network: max relative gradient error {linear_err:.3e} exceeds {LINEAR_TOL:.0e}"
    );
}

#[test]
fn gate_08_bootstrap_targets_match_hand_computed_values_exactly() {
    const NAMES: &[&str] = &["f0", "f1"];
    let state = |a: f64, b: f64| FeatureState::new(vec![a, b], NAMES);

    // Both networks are a single identity layer with dyadic-rational
    // weights, so every forward pass below is exact in f64 and the expected
    // targets can be written down as literals.
    //
    //   online:  q0 =  0.5 s0 + 0.25 s1 + 0.125
    //            q1 = -0.25 s0 + 0.5 s1 - 0.125
    //   target:  q0 =  0.25 s0 - 0.5 s1 - 0.25
    //            q1 =  0.5 s0 + 0.125 s1 + 0.25
    let online = Mlp::from_layers(
        2,
        vec![Layer {
            weights: array![[0.5, 0.25], [-0.25, 0.5]],
            biases: array![0.125, -0.125],
            activation: Activation::Identity,
        }],
    )
    .expect("online network");
    let target = Mlp::from_layers(
        2,
        vec![Layer {
            weights: array![[0.25, -0.5], [0.5, 0.125]],
            biases: array![-0.25, 0.25],
            activation: Activation::Identity,
        }],
    )
    .expect("target network");
    let gamma = 0.5;

    // (reward, terminal, next state, expected target), worked by hand:
    //   item 2: online (0.25, -0.5) picks arm 0; target arm 0 = 0.125,
    //           so 1 + 0.5 * 0.125 = 1.0625
    //   item 4: online (-0.3125, 0.25) picks arm 1; target arm 1 = -0.21875,
    //           so -1 + 0.5 * -0.21875 = -1.109375
    //   item 6: online (0.5, 0.3125) picks arm 0; target arm 0 = -0.6875,
    //           so -200 + 0.5 * -0.6875 = -200.34375
    let batch: [(f64, bool, FeatureState, f64); 6] = [
        (1.0, true, state(0.0, 0.0), 1.0),
        (1.0, false, state(0.5, -0.5), 1.0625),
        (0.0, true, state(0.0, 0.0), 0.0),
        (-1.0, false, state(-1.0, 0.25), -1.109375),
        (-200.0, true, state(0.0, 0.0), -200.0),
        (-200.0, false, state(0.25, 1.0), -200.34375),
    ];

    for (i, (reward, terminal, next_state, expected)) in batch.into_iter().enumerate() {
        let item = Transition {
            state: state(0.0, 0.0),
            action: ActionValue::Discrete(0),
            reward,
            next_state,
            terminal,
            failure: terminal && reward < 0.0,
        };
        let got = ddqn_target(&item, &online, &target, gamma).expect("bootstrap target");
        assert!(
            got == expected,
            "batch item {i}: bootstrap target must equal the hand-computed value \
             exactly (got {got}, expected {expected})"
        );
    }
    println!(
        "[gate 08] all 6 bootstrap targets exact (terminal and non-terminal, \
         rewards 1 / 0 / -1 / -200)"
    );
}

/// A cart-pole whose failure steps pay a cheerful reward instead of the
/// minimum: the contract auditor must reject it.
struct RewardMutated {
    inner: Box<dyn Environment>,
}

impl Environment for RewardMutated {
    fn reset(&mut self) -> FeatureState {
        self.inner.reset()
    }
    fn current_state(&self) -> FeatureState {
        self.inner.current_state()
    }
    fn is_terminal(&self) -> bool {
        self.inner.is_terminal()
    }
    fn step(&mut self, action: &ActionValue) -> Result<Transition, unprl_core::mdp::EnvError> {
        let mut t = self.inner.step(action)?;
        if t.failure {
            t.reward = 1.0;
        }
        Ok(t)
    }
    fn action_space(&self) -> ActionSpace {
        self.inner.action_space()
    }
    fn unp_spec(&self) -> &UnpSpec {
        self.inner.unp_spec()
    }
    fn backup_policy(&self) -> BackupPolicy {
        self.inner.backup_policy()
    }
    fn min_reward(&self) -> f64 {
        self.inner.min_reward()
    }
    fn set_state(&mut self, state: &FeatureState) -> Result<(), unprl_core::mdp::EnvError> {
        self.inner.set_state(state)
    }
    fn clone_env(&self) -> Box<dyn Environment> {
        Box::new(RewardMutated {
            inner: self.inner.clone_env(),
        })
    }
}

#[test]
fn gate_09_failure_reward_contract_validates_and_catches_mutation() {
    let mut line = String::new();
    for kind in [EnvKind::CartPole, EnvKind::LaneKeep, EnvKind::FlappyBird] {
        let mut env = build_env(kind, stream_rng(0, STREAM_ENV));
        let probes = envs::validation_probes(kind);
        let report = validate_assumption1(env.as_mut(), &probes).expect("probe sweep");
        line += &format!("{kind} {} probes ok; ", report.probes);
        assert!(
            report.passed(),
            "{kind}: failure steps must pay exactly the minimum reward and \
             non-failure steps more ({} violations over {} probes)",
            report.violations.len(),
            report.probes
        );
    }

    let mut broken = RewardMutated {
        inner: build_env(EnvKind::CartPole, stream_rng(0, STREAM_ENV)),
    };
    let report = validate_assumption1(&mut broken, &envs::validation_probes(EnvKind::CartPole))
        .expect("mutated probe sweep");
    println!(
        "[gate 09] {line}mutated cartpole rejected with {} violations",
        report.violations.len()
    );
    assert!(
        !report.passed(),
        "the auditor must reject a cart-pole whose failure steps no longer pay \
         the minimum reward"
    );
}

#[test]
fn gate_10_reruns_reproduce_the_run_log_bitwise() {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut line = String::new();
    for (kind, seeds, episodes) in [
        (EnvKind::CartPole, vec![1234u64, 4500], 25),
        (EnvKind::LaneKeep, vec![1234], 8),
        (EnvKind::FlappyBird, vec![1234], 8),
    ] {
        let mut cfg = ExperimentConfig::for_env(kind);
        cfg.seeds = seeds;
        cfg.max_episodes = episodes;
        let first = run_experiment(&cfg).expect("first run");
        let second = run_experiment(&cfg).expect("second run");
        let path_a = dir.path().join(format!("{kind}_a.csv"));
        let path_b = dir.path().join(format!("{kind}_b.csv"));
        write_runs_csv(&path_a, &first.runs).expect("first log");
        write_runs_csv(&path_b, &second.runs).expect("second log");
        let bytes_a = std::fs::read(&path_a).expect("first log bytes");
        let bytes_b = std::fs::read(&path_b).expect("second log bytes");
        assert!(
            bytes_a.len() > episodes,
            "{kind}: the run log should hold one row per episode"
        );
        assert!(
            bytes_a == bytes_b,
            "{kind}: repeating the same seeds must reproduce the run log \
             byte for byte ({} vs {} bytes)",
            bytes_a.len(),
            bytes_b.len()
        );
        line += &format!("{kind} {} bytes; ", bytes_a.len());
    }
    println!("[gate 10] byte-identical run logs on repetition: {line}");
}
