//! `unprl` — train, trace, validate, and gradient-check from the command
//! line.
//!
//! Exit codes: 0 on success, 1 for configuration problems (bad flags,
//! malformed config files, unreadable inputs), 2 for failures during a run,
//! and 3 when a validation or gradient check finds violations.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use unprl_core::envs::{self, EnvKind};
use unprl_core::harness::{
    build_filter, run_experiment, stream_rng, write_experiment, ExperimentConfig, Learner,
    ShieldMode, SnapshotPolicy, STREAM_ENV, STREAM_EVAL, STREAM_EVAL_ENV,
};
use unprl_core::mdp::run_episode;
use unprl_core::nn::{Activation, Mlp};
use unprl_core::shield::{check_backup_safety, validate_assumption1};
use unprl_core::BranchedCritic;

#[derive(Parser)]
#[command(
    name = "unprl",
    version,
    about = "Permissibility-shielded reinforcement learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one learner per seed and write CSV/SVG artifacts.
    Train(TrainArgs),
    /// Replay a saved policy snapshot for one evaluation episode.
    Trace(TraceArgs),
    /// Audit backup safety and the failure/reward contract.
    Validate(ValidateArgs),
    /// Finite-difference check of the network gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Environment: cartpole, lanekeep, or flappybird.
    #[arg(long, value_name = "ENV")]
    env: Option<String>,

    /// Config file (flat `key = value`; flags override it).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Shield mode: none, unp, or mbs.
    #[arg(long, value_name = "MODE")]
    shield: Option<String>,

    /// Comma-separated list of seeds.
    #[arg(long, value_name = "SEEDS")]
    seeds: Option<String>,

    /// Episode cap per seed.
    #[arg(long, value_name = "N")]
    episodes: Option<usize>,

    /// Output directory (default: runs/<env>_<shield>).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(flatten)]
    hp: HpArgs,
}

/// Hyperparameter overrides, mirroring the `hp.*` config keys.
#[derive(Args)]
struct HpArgs {
    #[arg(long = "hp.critic_lr", value_name = "LR")]
    critic_lr: Option<f64>,
    #[arg(long = "hp.actor_lr", value_name = "LR")]
    actor_lr: Option<f64>,
    #[arg(long = "hp.target_rate", value_name = "RATE")]
    target_rate: Option<f64>,
    #[arg(long = "hp.gamma", value_name = "G")]
    gamma: Option<f64>,
    #[arg(long = "hp.exploration_steps", value_name = "N")]
    exploration_steps: Option<usize>,
    #[arg(long = "hp.exploration_factor", value_name = "F")]
    exploration_factor: Option<f64>,
    #[arg(long = "hp.batch_size", value_name = "N")]
    batch_size: Option<usize>,
    #[arg(long = "hp.buffer_capacity", value_name = "N")]
    buffer_capacity: Option<usize>,
}

#[derive(Args)]
struct TraceArgs {
    /// Environment the policy was trained for.
    #[arg(long, value_name = "ENV")]
    env: String,

    /// Policy snapshot written by `train` (policy_<seed>.txt).
    #[arg(long, value_name = "FILE")]
    policy: PathBuf,

    /// Shield mode during replay: none, unp, or mbs.
    #[arg(long, value_name = "MODE", default_value = "unp")]
    shield: String,

    /// Seed for the environment's own randomness.
    #[arg(long, value_name = "SEED", default_value_t = 0)]
    seed: u64,

    /// Where to write the trace CSV.
    #[arg(long, value_name = "FILE", default_value = "trace.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    /// Environment to audit; omit to audit all three.
    #[arg(long, value_name = "ENV")]
    env: Option<String>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Random parameter probes per network.
    #[arg(long, value_name = "N", default_value_t = 100)]
    probes: usize,

    /// Seed for probe selection and network initialization.
    #[arg(long, value_name = "SEED", default_value_t = 0)]
    seed: u64,

    /// Maximum relative error accepted for the relu/tanh networks.
    #[arg(long, value_name = "TOL", default_value_t = 1e-4)]
    tolerance: f64,
}

/// An error carrying the process exit code it should produce.
struct CliError {
    code: u8,
    source: anyhow::Error,
}

impl CliError {
    fn config(source: anyhow::Error) -> Self {
        Self { code: 1, source }
    }

    fn run(source: anyhow::Error) -> Self {
        Self { code: 2, source }
    }

    fn validation(source: anyhow::Error) -> Self {
        Self { code: 3, source }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are successes; everything else is a
            // configuration error.
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {:#}", err.source);
            ExitCode::from(err.code)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => train(args),
        Command::Trace(args) => trace(args),
        Command::Validate(args) => validate(args),
        Command::Gradcheck(args) => gradcheck(args),
    }
}

fn parse_env(text: &str) -> Result<EnvKind, CliError> {
    text.parse::<EnvKind>()
        .map_err(|e| CliError::config(anyhow!(e)))
}

fn parse_shield(text: &str) -> Result<ShieldMode, CliError> {
    text.parse::<ShieldMode>()
        .map_err(|e| CliError::config(anyhow!(e)))
}

fn build_config(args: &TrainArgs) -> Result<ExperimentConfig, CliError> {
    let mut config = match (&args.config, &args.env) {
        (Some(path), _) => ExperimentConfig::from_file(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(CliError::config)?,
        (None, Some(env)) => ExperimentConfig::for_env(parse_env(env)?),
        (None, None) => {
            return Err(CliError::config(anyhow!(
                "either --env or --config is required"
            )))
        }
    };
    if let (Some(path), Some(env)) = (&args.config, &args.env) {
        // A config file pins its environment; a conflicting flag is a
        // mistake rather than an override.
        let flag_env = parse_env(env)?;
        if flag_env != config.env {
            return Err(CliError::config(anyhow!(
                "--env {} conflicts with env = {} in {}",
                flag_env,
                config.env,
                path.display()
            )));
        }
    }

    let mut apply = |key: &str, value: String| -> Result<(), CliError> {
        config
            .apply_override(key, &value)
            .map_err(|e| CliError::config(anyhow!(e)))
    };
    if let Some(shield) = &args.shield {
        apply("shield", shield.clone())?;
    }
    if let Some(seeds) = &args.seeds {
        apply("seeds", seeds.clone())?;
    }
    if let Some(episodes) = args.episodes {
        apply("episodes", episodes.to_string())?;
    }
    let hp = &args.hp;
    let hp_overrides: [(&str, Option<String>); 8] = [
        ("hp.critic_lr", hp.critic_lr.map(|v| v.to_string())),
        ("hp.actor_lr", hp.actor_lr.map(|v| v.to_string())),
        ("hp.target_rate", hp.target_rate.map(|v| v.to_string())),
        ("hp.gamma", hp.gamma.map(|v| v.to_string())),
        (
            "hp.exploration_steps",
            hp.exploration_steps.map(|v| v.to_string()),
        ),
        (
            "hp.exploration_factor",
            hp.exploration_factor.map(|v| v.to_string()),
        ),
        ("hp.batch_size", hp.batch_size.map(|v| v.to_string())),
        (
            "hp.buffer_capacity",
            hp.buffer_capacity.map(|v| v.to_string()),
        ),
    ];
    for (key, value) in hp_overrides {
        if let Some(value) = value {
            apply(key, value)?;
        }
    }
    config
        .validate()
        .map_err(|e| CliError::config(anyhow!(e)))?;
    Ok(config)
}

fn train(args: TrainArgs) -> Result<(), CliError> {
    let config = build_config(&args)?;
    let out = args
        .out
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}_{}", config.env, config.shield_mode)));

    println!(
        "training {} with shield '{}' over {} seed(s), up to {} episodes each",
        config.env,
        config.shield_mode,
        config.seeds.len(),
        config.max_episodes
    );
    let result = run_experiment(&config).map_err(|e| CliError::run(anyhow!(e)))?;
    for run in &result.runs {
        let convergence = match run.converged_at {
            Some(ep) => format!("converged at episode {ep}"),
            None => "did not converge".to_string(),
        };
        println!(
            "  seed {}: {} episodes, {}, {} unsafe action(s), {} intervention(s)",
            run.seed,
            run.episodes.len(),
            convergence,
            run.total_unsafe(),
            run.total_interventions()
        );
    }
    write_experiment(&out, &result)
        .with_context(|| format!("writing artifacts to {}", out.display()))
        .map_err(CliError::run)?;
    println!("artifacts written to {}", out.display());
    Ok(())
}

fn trace(args: TraceArgs) -> Result<(), CliError> {
    let kind = parse_env(&args.env)?;
    let mode = parse_shield(&args.shield)?;
    let file = File::open(&args.policy)
        .with_context(|| format!("opening {}", args.policy.display()))
        .map_err(CliError::config)?;
    let net = Mlp::load_snapshot(&mut BufReader::new(file))
        .with_context(|| format!("loading snapshot {}", args.policy.display()))
        .map_err(CliError::config)?;
    let mut policy = SnapshotPolicy::for_env(kind, net).map_err(|e| CliError::config(anyhow!(e)))?;

    // Same streams as a training run's own evaluation episode, so tracing a
    // freshly trained policy with its seed reproduces trace_<seed>.csv.
    let mut env = envs::build_env(kind, stream_rng(args.seed, STREAM_EVAL_ENV));
    let mut filter = build_filter(kind, mode);
    let mut rng = stream_rng(args.seed, STREAM_EVAL);
    let log = run_episode(
        env.as_mut(),
        &mut policy,
        filter.as_deref_mut(),
        envs::episode_step_cap(kind),
        &mut rng,
    )
    .map_err(|e| CliError::run(anyhow!(e)))?;

    unprl_core::harness::output::write_trace_csv(&args.out, &log)
        .map_err(|e| CliError::run(anyhow!(e)))?;
    println!(
        "{} steps, episode reward {}, {} unsafe action(s), {} intervention(s); trace in {}",
        log.len(),
        log.episode_reward,
        log.unsafe_count(),
        log.intervention_count(),
        args.out.display()
    );
    Ok(())
}

fn validate(args: ValidateArgs) -> Result<(), CliError> {
    let kinds: Vec<EnvKind> = match &args.env {
        Some(env) => vec![parse_env(env)?],
        None => EnvKind::ALL.to_vec(),
    };
    let mut violations = 0u64;
    for kind in kinds {
        let env = envs::build_env(kind, stream_rng(0, STREAM_ENV));
        let (states, actions) = envs::danger_grid(kind);
        let report = check_backup_safety(
            env.unp_spec(),
            env.backup_policy(),
            states.into_iter(),
            &actions,
        )
        .map_err(|e| CliError::run(anyhow!(e)))?;
        println!(
            "{kind}: backup safety over {} states / {} pairs: {} blocked, {} violation(s)",
            report.states, report.pairs_checked, report.blocked_pairs, report.violation_count
        );
        violations += report.violation_count as u64;

        let mut env = envs::build_env(kind, stream_rng(0, STREAM_ENV));
        let probes = envs::validation_probes(kind);
        let report =
            validate_assumption1(env.as_mut(), &probes).map_err(|e| CliError::run(anyhow!(e)))?;
        println!(
            "{kind}: failure/reward contract over {} probes / {} steps: {} violation(s)",
            report.probes,
            report.steps_checked,
            report.violations.len()
        );
        violations += report.violations.len() as u64;
    }
    if violations > 0 {
        return Err(CliError::validation(anyhow!(
            "{violations} violation(s) found"
        )));
    }
    println!("all checks passed");
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> Result<(), CliError> {
    if args.probes == 0 {
        return Err(CliError::config(anyhow!("--probes must be at least 1")));
    }
    if !(args.tolerance > 0.0) {
        return Err(CliError::config(anyhow!("--tolerance must be positive")));
    }
    let mut init = stream_rng(args.seed, STREAM_INIT_GRADCHECK);
    let mut probe = stream_rng(args.seed, STREAM_PROBE_GRADCHECK);
    let mut worst: f64 = 0.0;

    // The architectures the experiments actually train, at each task's
    // input width, plus a pure linear net whose gradients must come out
    // exact to machine precision.
    let mut checks: Vec<(String, f64)> = Vec::new();

    for (label, kind, dim, out) in [
        ("cartpole q-network", EnvKind::CartPole, 4, 2),
        ("flappybird q-network", EnvKind::FlappyBird, 5, 2),
    ] {
        let mut arch: Vec<(usize, Activation)> = Learner::q_hidden(kind)
            .iter()
            .map(|&width| (width, Activation::Relu))
            .collect();
        arch.push((out, Activation::Identity));
        let net = Mlp::new(dim, &arch, &mut init).map_err(|e| CliError::run(anyhow!(e)))?;
        let input: Vec<f64> = (0..dim).map(|i| 0.3 - 0.15 * i as f64).collect();
        let err = net
            .finite_diff_check(&input, args.probes, &mut probe)
            .map_err(|e| CliError::run(anyhow!(e)))?;
        checks.push((label.to_string(), err));
    }

    let actor = Mlp::new(
        4,
        &[
            (128, Activation::Relu),
            (256, Activation::Relu),
            (1, Activation::Tanh),
        ],
        &mut init,
    )
    .map_err(|e| CliError::run(anyhow!(e)))?;
    let err = actor
        .finite_diff_check(&[0.2, -0.4, 0.1, 0.6], args.probes, &mut probe)
        .map_err(|e| CliError::run(anyhow!(e)))?;
    checks.push(("lanekeep actor".to_string(), err));

    let critic = BranchedCritic::new(4, &mut init).map_err(|e| CliError::run(anyhow!(e)))?;
    let err = critic
        .finite_diff_check(&[0.2, -0.4, 0.1, 0.6], 0.35, args.probes, &mut probe)
        .map_err(|e| CliError::run(anyhow!(e)))?;
    checks.push(("lanekeep critic".to_string(), err));

    let linear = Mlp::new(6, &[(3, Activation::Identity)], &mut init)
        .map_err(|e| CliError::run(anyhow!(e)))?;
    let linear_err = linear
        .finite_diff_check(&[0.5, -1.0, 0.25, 2.0, -0.75, 0.1], args.probes.min(21), &mut probe)
        .map_err(|e| CliError::run(anyhow!(e)))?;

    for (label, err) in &checks {
        println!("{label}: max relative error {err:.3e}");
        worst = worst.max(*err);
    }
    println!("linear network: max relative error {linear_err:.3e}");

    let linear_tolerance = 1e-8;
    if worst > args.tolerance || linear_err > linear_tolerance {
        return Err(CliError::validation(anyhow!(
            "gradient mismatch: worst {worst:.3e} (tolerance {:.1e}), linear {linear_err:.3e} \
             (tolerance {linear_tolerance:.1e})",
            args.tolerance
        )));
    }
    println!("all gradients verified");
    Ok(())
}

// Gradcheck draws from its own streams so it cannot collide with training
// runs that share a seed.
const STREAM_INIT_GRADCHECK: u64 = 100;
const STREAM_PROBE_GRADCHECK: u64 = 101;
