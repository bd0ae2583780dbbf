//! Permissibility-shielded reinforcement learning.
//!
//! The crate trains value- and policy-gradient agents on small deterministic
//! control tasks while a runtime shield keeps every executed action outside a
//! user-declared set of unsafe or otherwise non-permissible actions. The
//! pieces compose through two small traits: [`mdp::Environment`] for the
//! tasks and [`mdp::ActionFilter`] for anything that sits between a policy
//! and the environment.
//!
//! - [`mdp`] — states, actions, transitions, episode runner.
//! - [`envs`] — the three benchmark tasks: cart-pole, lane keeping, and a
//!   side-scrolling flapper.
//! - [`shield`] — declarative unsafe/non-permissible action sets, the
//!   backup-substitution shield, and safety validation sweeps.
//! - [`mbs`] — a model-based lookahead filter used as a baseline.
//! - [`nn`] — small dense networks with hand-written backprop.
//! - [`replay`], [`agents`] — uniform experience replay and the two
//!   learners (double Q-learning and deterministic policy gradient).
//! - [`harness`] — seeded multi-run experiments with CSV/SVG output.
//!
//! Every random draw flows through a caller-supplied ChaCha generator, so
//! identical seeds reproduce identical runs bit for bit.

pub mod agents;
pub mod envs;
pub mod harness;
pub mod mbs;
pub mod mdp;
pub mod nn;
pub mod replay;
pub mod shield;

pub use agents::{
    BranchedCritic, DdpgAgent, DdqnAgent, DeterministicDdpg, GreedyDdqn, Hyperparameters,
};
pub use envs::{build_env, EnvKind};
pub use mdp::{
    run_episode, ActionFilter, ActionSource, ActionSpace, ActionValue, Environment, EpisodeLog,
    FeatureState, Transition,
};
pub use mbs::{MbsConfig, MbsShield};
pub use nn::{Activation, Mlp};
pub use replay::ReplayBuffer;
pub use shield::{BackupPolicy, Shield, UnpSpec};
