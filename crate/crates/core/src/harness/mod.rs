//! The experiment harness: configuration, seeded execution, and artifact
//! output. The CLI is a thin veneer over this module.

pub mod config;
pub mod output;
pub mod runner;

pub use config::{ConfigError, ExperimentConfig, ShieldMode};
pub use output::write_experiment;
pub use runner::{
    aggregate, build_filter, run_experiment, run_single, stream_rng, trailing_mean, CurvePoint,
    EpisodeRecord, ExperimentResult, Learner, RunResult, SnapshotPolicy, STREAM_ENV, STREAM_EVAL,
    STREAM_EVAL_ENV, STREAM_INIT, STREAM_STEP,
};

use thiserror::Error;

use crate::envs::EnvKind;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mdp(#[from] crate::mdp::MdpError),
    #[error(transparent)]
    Agent(#[from] crate::agents::AgentError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error("policy snapshot does not fit {env}: {reason}")]
    PolicyMismatch { env: EnvKind, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
