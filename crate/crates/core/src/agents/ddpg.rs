//! DDPG for one-dimensional continuous control: a deterministic tanh actor
//! and a two-branch Q critic, each with a slowly tracking target copy.
//!
//! The critic feeds state and action through separate trunks and merges
//! them in a joint head; the actor is trained by pushing its output up the
//! critic's action gradient.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::{scale_features, AgentError, Hyperparameters, EXPLORATION_FLOOR};
use crate::mdp::{ActionSource, ActionValue, FeatureState, Transition};
use crate::nn::{Activation, ForwardCache, GradientSet, Mlp, NnError};
use crate::replay::ReplayBuffer;

/// Q(s, a) as two trunks joined by a head: `head(concat(state_branch(s),
/// action_branch(a)))`. Actions are scalars in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchedCritic {
    state_branch: Mlp,
    action_branch: Mlp,
    head: Mlp,
}

/// Parameter gradients for all three sub-networks.
#[derive(Debug, Clone)]
pub struct CriticGrads {
    pub state_branch: GradientSet,
    pub action_branch: GradientSet,
    pub head: GradientSet,
}

/// Forward caches for all three sub-networks, consumed by
/// [`BranchedCritic::backward_batch`].
pub struct CriticCache {
    state_branch: ForwardCache,
    action_branch: ForwardCache,
    head: ForwardCache,
    split: usize,
}

impl BranchedCritic {
    /// The experiment architecture: state through 128- and 256-unit relu
    /// layers, the action through one 256-unit relu layer, and the merged
    /// 512 features through a 256-unit relu layer into a scalar.
    pub fn new(state_dim: usize, rng: &mut dyn RngCore) -> Result<Self, NnError> {
        let state_branch = Mlp::new(
            state_dim,
            &[(128, Activation::Relu), (256, Activation::Relu)],
            rng,
        )?;
        let action_branch = Mlp::new(1, &[(256, Activation::Relu)], rng)?;
        let head = Mlp::new(
            512,
            &[(256, Activation::Relu), (1, Activation::Identity)],
            rng,
        )?;
        Self::from_parts(state_branch, action_branch, head)
    }

    /// Assembles a critic from explicit sub-networks, validating that the
    /// head consumes exactly the two branch outputs, the action branch
    /// takes a scalar, and the head emits a scalar.
    pub fn from_parts(
        state_branch: Mlp,
        action_branch: Mlp,
        head: Mlp,
    ) -> Result<Self, NnError> {
        if action_branch.input_dim() != 1 {
            return Err(NnError::DimMismatch {
                what: "action branch input",
                expected: 1,
                got: action_branch.input_dim(),
            });
        }
        let merged = state_branch.output_dim() + action_branch.output_dim();
        if head.input_dim() != merged {
            return Err(NnError::DimMismatch {
                what: "head input",
                expected: merged,
                got: head.input_dim(),
            });
        }
        if head.output_dim() != 1 {
            return Err(NnError::DimMismatch {
                what: "head output",
                expected: 1,
                got: head.output_dim(),
            });
        }
        Ok(Self {
            state_branch,
            action_branch,
            head,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_branch.input_dim()
    }

    pub fn param_count(&self) -> usize {
        self.state_branch.param_count() + self.action_branch.param_count() + self.head.param_count()
    }

    /// Q-values for a batch: `states` is `(n, state_dim)`, `actions` is
    /// `(n, 1)`, and the result is `(n, 1)`.
    pub fn forward_batch(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
    ) -> Result<Array2<f64>, NnError> {
        let hs = self.state_branch.forward_batch(states)?;
        let ha = self.action_branch.forward_batch(actions)?;
        let merged = concatenate(Axis(1), &[hs.view(), ha.view()])
            .expect("branch batches have equal row counts");
        self.head.forward_batch(merged.view())
    }

    pub fn forward_batch_cached(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, CriticCache), NnError> {
        let (hs, state_cache) = self.state_branch.forward_batch_cached(states)?;
        let (ha, action_cache) = self.action_branch.forward_batch_cached(actions)?;
        let split = hs.ncols();
        let merged = concatenate(Axis(1), &[hs.view(), ha.view()])
            .expect("branch batches have equal row counts");
        let (q, head_cache) = self.head.forward_batch_cached(merged.view())?;
        Ok((
            q,
            CriticCache {
                state_branch: state_cache,
                action_branch: action_cache,
                head: head_cache,
                split,
            },
        ))
    }

    /// Backward pass: returns parameter gradients plus the gradients with
    /// respect to the state and action inputs (the latter drives the actor
    /// update).
    pub fn backward_batch(
        &self,
        cache: &CriticCache,
        output_grads: ArrayView2<f64>,
    ) -> Result<(CriticGrads, Array2<f64>, Array2<f64>), NnError> {
        let (head_grads, merged_grads) = self.head.backward_batch(&cache.head, output_grads)?;
        let state_part = merged_grads.slice(s![.., ..cache.split]);
        let action_part = merged_grads.slice(s![.., cache.split..]);
        let (state_grads, d_states) = self
            .state_branch
            .backward_batch(&cache.state_branch, state_part)?;
        let (action_grads, d_actions) = self
            .action_branch
            .backward_batch(&cache.action_branch, action_part)?;
        Ok((
            CriticGrads {
                state_branch: state_grads,
                action_branch: action_grads,
                head: head_grads,
            },
            d_states,
            d_actions,
        ))
    }

    pub fn sgd_update(&mut self, grads: &CriticGrads, lr: f64) -> Result<(), NnError> {
        self.state_branch.sgd_update(&grads.state_branch, lr)?;
        self.action_branch.sgd_update(&grads.action_branch, lr)?;
        self.head.sgd_update(&grads.head, lr)
    }

    pub fn soft_update(&mut self, online: &BranchedCritic, rate: f64) -> Result<(), NnError> {
        self.state_branch.soft_update(&online.state_branch, rate)?;
        self.action_branch.soft_update(&online.action_branch, rate)?;
        self.head.soft_update(&online.head, rate)
    }

    /// Single-pair Q-value.
    pub fn q_value(&self, state: &[f64], action: f64) -> Result<f64, NnError> {
        let s = ArrayView2::from_shape((1, state.len()), state)
            .map_err(|_| NnError::DimMismatch {
                what: "state shape",
                expected: self.state_dim(),
                got: state.len(),
            })?;
        let a = [action];
        let a = ArrayView2::from_shape((1, 1), &a).expect("1x1 view");
        Ok(self.forward_batch(s, a)?[[0, 0]])
    }

    fn pattern_forward(&self, state: &[f64], action: f64) -> Result<(f64, Vec<bool>), NnError> {
        let (hs, mut pattern) = self.state_branch.forward_pattern(state)?;
        let (ha, pa) = self.action_branch.forward_pattern(&[action])?;
        pattern.extend(pa);
        let merged: Vec<f64> = hs.into_iter().chain(ha).collect();
        let (q, ph) = self.head.forward_pattern(&merged)?;
        pattern.extend(ph);
        Ok((q[0], pattern))
    }

    /// Central finite-difference verification of the composite backward
    /// pass, mirroring [`Mlp::finite_diff_check`] (step 1e-5, relative
    /// error against `max(|fd| + |analytic|, 1e-5)`, relu-kink probes
    /// redrawn).
    pub fn finite_diff_check(
        &self,
        state: &[f64],
        action: f64,
        probe_count: usize,
        rng: &mut dyn RngCore,
    ) -> Result<f64, NnError> {
        const H: f64 = 1e-5;
        let total = self.param_count();
        if probe_count == 0 || probe_count > total {
            return Err(NnError::BadProbeCount {
                requested: probe_count,
                available: total,
            });
        }

        let s = ArrayView2::from_shape((1, state.len()), state)
            .map_err(|_| NnError::DimMismatch {
                what: "state shape",
                expected: self.state_dim(),
                got: state.len(),
            })?;
        let a = [action];
        let a = ArrayView2::from_shape((1, 1), &a).expect("1x1 view");
        let (_, cache) = self.forward_batch_cached(s, a)?;
        let ones = Array2::from_elem((1, 1), 1.0);
        let (analytic, _, _) = self.backward_batch(&cache, ones.view())?;
        let (_, base_pattern) = self.pattern_forward(state, action)?;

        let counts = [
            self.state_branch.param_count(),
            self.action_branch.param_count(),
            self.head.param_count(),
        ];
        let lookup = |idx: usize| -> f64 {
            if idx < counts[0] {
                analytic.state_branch.param(idx).expect("in range")
            } else if idx < counts[0] + counts[1] {
                analytic.action_branch.param(idx - counts[0]).expect("in range")
            } else {
                analytic
                    .head
                    .param(idx - counts[0] - counts[1])
                    .expect("in range")
            }
        };
        let perturb = |critic: &mut BranchedCritic, idx: usize, by: f64| {
            let slot = if idx < counts[0] {
                critic.state_branch.param_mut(idx)
            } else if idx < counts[0] + counts[1] {
                critic.action_branch.param_mut(idx - counts[0])
            } else {
                critic.head.param_mut(idx - counts[0] - counts[1])
            };
            *slot.expect("in range") += by;
        };

        let mut max_rel = 0.0_f64;
        let mut completed = 0usize;
        for _ in 0..probe_count {
            for _ in 0..32 {
                let idx = rng.random_range(0..total);
                let mut plus = self.clone();
                perturb(&mut plus, idx, H);
                let mut minus = self.clone();
                perturb(&mut minus, idx, -H);
                let (f_plus, p_plus) = plus.pattern_forward(state, action)?;
                let (f_minus, p_minus) = minus.pattern_forward(state, action)?;
                if p_plus != base_pattern || p_minus != base_pattern {
                    continue;
                }
                let fd = (f_plus - f_minus) / (2.0 * H);
                let an = lookup(idx);
                let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-5);
                max_rel = max_rel.max(rel);
                completed += 1;
                break;
            }
        }
        if completed == 0 {
            return Err(NnError::DegenerateFdCheck);
        }
        Ok(max_rel)
    }
}

#[derive(Debug, Clone)]
pub struct DdpgAgent {
    actor: Mlp,
    critic: BranchedCritic,
    target_actor: Mlp,
    target_critic: BranchedCritic,
    hp: Hyperparameters,
    noise_scale: f64,
    buffer: ReplayBuffer,
    env_steps: usize,
    feature_scale: Vec<f64>,
    last_critic_loss: Option<f64>,
}

impl DdpgAgent {
    /// Builds the actor (128- and 256-unit relu layers into a tanh output)
    /// and critic with their target copies.
    pub fn new(
        state_dim: usize,
        hp: Hyperparameters,
        feature_scale: Vec<f64>,
        rng: &mut dyn RngCore,
    ) -> Result<Self, AgentError> {
        hp.validate()?;
        if hp.actor_lr.is_none() {
            return Err(AgentError::MissingActorLr);
        }
        if feature_scale.len() != state_dim {
            return Err(AgentError::BadHyperparameters(format!(
                "feature scale has {} entries for state dimension {}",
                feature_scale.len(),
                state_dim
            )));
        }
        let actor = Mlp::new(
            state_dim,
            &[
                (128, Activation::Relu),
                (256, Activation::Relu),
                (1, Activation::Tanh),
            ],
            rng,
        )?;
        let critic = BranchedCritic::new(state_dim, rng)?;
        let target_actor = actor.clone();
        let target_critic = critic.clone();
        let buffer = ReplayBuffer::new(hp.buffer_capacity);
        Ok(Self {
            actor,
            critic,
            target_actor,
            target_critic,
            hp,
            noise_scale: 1.0,
            buffer,
            env_steps: 0,
            feature_scale,
            last_critic_loss: None,
        })
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn critic(&self) -> &BranchedCritic {
        &self.critic
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hp
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    /// Overrides the exploration noise; evaluation tooling uses this,
    /// training never calls it.
    pub fn set_noise_scale(&mut self, scale: f64) {
        self.noise_scale = scale.max(0.0);
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn env_steps(&self) -> usize {
        self.env_steps
    }

    pub fn last_critic_loss(&self) -> Option<f64> {
        self.last_critic_loss
    }

    /// The deterministic policy action (no noise), clipped to `[-1, 1]`.
    pub fn policy_action(&self, state: &FeatureState) -> ActionValue {
        let scaled = scale_features(state.values(), &self.feature_scale);
        let out = self.actor.forward(&scaled).expect("network matches state dim");
        ActionValue::Continuous(out[0].clamp(-1.0, 1.0))
    }

    /// One multiplicative noise decay, clipped at the floor.
    pub fn decay_exploration(&mut self) {
        self.noise_scale = (self.noise_scale * self.hp.exploration_factor).max(EXPLORATION_FLOOR);
    }

    /// One critic step (squared bootstrap error), one actor step (up the
    /// critic's action gradient), and soft updates of both targets.
    /// Returns the critic loss and the actor objective (mean Q under the
    /// pre-update policy).
    pub fn train_step(&mut self, rng: &mut dyn RngCore) -> Result<(f64, f64), AgentError> {
        let need = self.hp.train_threshold();
        if self.buffer.len() < need {
            return Err(AgentError::InsufficientData {
                have: self.buffer.len(),
                need,
            });
        }
        let n = self.hp.batch_size;
        let batch = self.buffer.sample(n, rng).expect("buffer checked non-empty");

        let dim = self.feature_scale.len();
        let mut states = Array2::zeros((n, dim));
        let mut next_states = Array2::zeros((n, dim));
        let mut actions = Array2::zeros((n, 1));
        for (i, item) in batch.iter().enumerate() {
            for (j, (v, s)) in item
                .state
                .values()
                .iter()
                .zip(&self.feature_scale)
                .enumerate()
            {
                states[[i, j]] = v / s;
            }
            for (j, (v, s)) in item
                .next_state
                .values()
                .iter()
                .zip(&self.feature_scale)
                .enumerate()
            {
                next_states[[i, j]] = v / s;
            }
            actions[[i, 0]] = item.action.scalar().ok_or(AgentError::WrongActionType)?;
        }

        // Critic step: bootstrap through the target actor and critic.
        let next_actions = self.target_actor.forward_batch(next_states.view())?;
        let q_next = self
            .target_critic
            .forward_batch(next_states.view(), next_actions.view())?;
        let (q, cache) = self.critic.forward_batch_cached(states.view(), actions.view())?;
        let mut out_grads = Array2::zeros((n, 1));
        let mut loss = 0.0;
        for (i, item) in batch.iter().enumerate() {
            let y = if item.terminal {
                item.reward
            } else {
                item.reward + self.hp.gamma * q_next[[i, 0]]
            };
            let diff = q[[i, 0]] - y;
            loss += diff * diff;
            out_grads[[i, 0]] = 2.0 * diff / n as f64;
        }
        loss /= n as f64;
        let (critic_grads, _, _) = self.critic.backward_batch(&cache, out_grads.view())?;
        self.critic.sgd_update(&critic_grads, self.hp.critic_lr)?;

        // Actor step: ascend mean Q(s, actor(s)) through the fresh critic.
        let (policy_actions, actor_cache) = self.actor.forward_batch_cached(states.view())?;
        let (policy_q, policy_cache) = self
            .critic
            .forward_batch_cached(states.view(), policy_actions.view())?;
        let objective = policy_q.sum() / n as f64;
        let descent = Array2::from_elem((n, 1), -1.0 / n as f64);
        let (_, _, d_actions) = self.critic.backward_batch(&policy_cache, descent.view())?;
        let (actor_grads, _) = self.actor.backward_batch(&actor_cache, d_actions.view())?;
        let actor_lr = self.hp.actor_lr.expect("validated at construction");
        self.actor.sgd_update(&actor_grads, actor_lr)?;

        self.target_actor.soft_update(&self.actor, self.hp.target_rate)?;
        self.target_critic.soft_update(&self.critic, self.hp.target_rate)?;
        self.last_critic_loss = Some(loss);
        Ok((loss, objective))
    }
}

impl ActionSource for DdpgAgent {
    /// During the warm-up phase (the first `exploration_steps` environment
    /// steps) a uniform random action; afterwards the actor's output plus
    /// scaled Gaussian noise, clipped to `[-1, 1]`.
    fn select(&mut self, state: &FeatureState, rng: &mut dyn RngCore) -> ActionValue {
        if self.env_steps < self.hp.exploration_steps {
            return ActionValue::Continuous(rng.random_range(-1.0..=1.0));
        }
        let base = match self.policy_action(state) {
            ActionValue::Continuous(a) => a,
            ActionValue::Discrete(_) => unreachable!("DDPG actions are continuous"),
        };
        let noise: f64 = rng.sample(StandardNormal);
        ActionValue::Continuous((base + self.noise_scale * noise).clamp(-1.0, 1.0))
    }

    /// Stores the executed transition, decays noise once the warm-up is
    /// over, and runs one training step once the buffer is ready.
    fn observe(&mut self, transition: &Transition, rng: &mut dyn RngCore) {
        self.buffer.push(transition.clone());
        self.env_steps += 1;
        if self.env_steps > self.hp.exploration_steps {
            self.decay_exploration();
        }
        if self.buffer.len() >= self.hp.train_threshold() {
            self.train_step(rng).expect("training invariants hold");
        }
    }
}

/// Borrowing wrapper that plays the actor's deterministic policy without
/// noise or learning; used for evaluation traces.
pub struct DeterministicDdpg<'a>(pub &'a DdpgAgent);

impl ActionSource for DeterministicDdpg<'_> {
    fn select(&mut self, state: &FeatureState, _rng: &mut dyn RngCore) -> ActionValue {
        self.0.policy_action(state)
    }
}
