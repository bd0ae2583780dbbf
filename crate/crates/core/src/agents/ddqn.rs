//! Double DQN for small discrete action spaces.
//!
//! One online network selects actions and one slowly tracking target
//! network evaluates them: the bootstrap target scores the online argmax
//! with the target network's value, decoupling selection from evaluation.

use ndarray::Array2;
use rand::{Rng, RngCore};

use super::{scale_features, AgentError, Hyperparameters, EXPLORATION_FLOOR};
use crate::mdp::{ActionSource, ActionValue, FeatureState, Transition};
use crate::nn::{Activation, Mlp};
use crate::replay::ReplayBuffer;

/// Index of the largest entry, lowest index on ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// The bootstrap target for one transition:
/// `r` if the transition is terminal, otherwise
/// `r + gamma * Q_target(s', argmax_a Q_online(s', a))`.
///
/// Operates on raw (unscaled) next-state features; the agent applies its
/// feature scaling before calling into its networks.
pub fn ddqn_target(
    item: &Transition,
    online: &Mlp,
    target: &Mlp,
    gamma: f64,
) -> Result<f64, AgentError> {
    if item.terminal {
        return Ok(item.reward);
    }
    let next = item.next_state.values();
    let q_online = online.forward(next)?;
    let best = argmax(&q_online);
    let q_target = target.forward(next)?;
    Ok(item.reward + gamma * q_target[best])
}

#[derive(Debug, Clone)]
pub struct DdqnAgent {
    online: Mlp,
    target: Mlp,
    hp: Hyperparameters,
    epsilon: f64,
    buffer: ReplayBuffer,
    env_steps: usize,
    action_count: usize,
    feature_scale: Vec<f64>,
    last_loss: Option<f64>,
}

impl DdqnAgent {
    /// Builds online and target networks (`hidden` relu layers feeding a
    /// linear head with one output per action); the target starts as an
    /// exact copy of the online network.
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        action_count: usize,
        hp: Hyperparameters,
        feature_scale: Vec<f64>,
        rng: &mut dyn RngCore,
    ) -> Result<Self, AgentError> {
        hp.validate()?;
        if action_count < 2 {
            return Err(AgentError::BadHyperparameters(
                "a discrete agent needs at least two actions".into(),
            ));
        }
        if feature_scale.len() != input_dim {
            return Err(AgentError::BadHyperparameters(format!(
                "feature scale has {} entries for input dimension {}",
                feature_scale.len(),
                input_dim
            )));
        }
        let mut specs: Vec<(usize, Activation)> =
            hidden.iter().map(|n| (*n, Activation::Relu)).collect();
        specs.push((action_count, Activation::Identity));
        let online = Mlp::new(input_dim, &specs, rng)?;
        let target = online.clone();
        let buffer = ReplayBuffer::new(hp.buffer_capacity);
        Ok(Self {
            online,
            target,
            hp,
            epsilon: 1.0,
            buffer,
            env_steps: 0,
            action_count,
            feature_scale,
            last_loss: None,
        })
    }

    pub fn online(&self) -> &Mlp {
        &self.online
    }

    pub fn target(&self) -> &Mlp {
        &self.target
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hp
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Overrides the exploration rate; evaluation tooling uses this to pin
    /// behaviour, training never calls it.
    pub fn set_epsilon(&mut self, epsilon: f64) {
        self.epsilon = epsilon.clamp(0.0, 1.0);
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn env_steps(&self) -> usize {
        self.env_steps
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.last_loss
    }

    /// Q-values for a raw state, after feature scaling.
    pub fn q_values(&self, state: &FeatureState) -> Vec<f64> {
        let scaled = scale_features(state.values(), &self.feature_scale);
        self.online.forward(&scaled).expect("network matches state dim")
    }

    /// The greedy action: argmax of the Q-values, lowest index on ties.
    pub fn greedy_action(&self, state: &FeatureState) -> ActionValue {
        ActionValue::Discrete(argmax(&self.q_values(state)))
    }

    /// One multiplicative exploration decay, clipped at the floor.
    pub fn decay_exploration(&mut self) {
        self.epsilon = (self.epsilon * self.hp.exploration_factor).max(EXPLORATION_FLOOR);
    }

    /// One gradient step on a uniformly sampled minibatch, followed by a
    /// soft target update. Returns the minibatch loss.
    pub fn train_step(&mut self, rng: &mut dyn RngCore) -> Result<f64, AgentError> {
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
        }

        // Bootstrap targets: online picks, target scores.
        let q_next_online = self.online.forward_batch(next_states.view())?;
        let q_next_target = self.target.forward_batch(next_states.view())?;
        let mut targets = vec![0.0; n];
        for (i, item) in batch.iter().enumerate() {
            targets[i] = if item.terminal {
                item.reward
            } else {
                let row = q_next_online.row(i);
                let best = argmax(row.as_slice().expect("contiguous row"));
                item.reward + self.hp.gamma * q_next_target[[i, best]]
            };
        }

        // Squared error on the taken actions only.
        let (q, cache) = self.online.forward_batch_cached(states.view())?;
        let mut out_grads = Array2::zeros((n, self.action_count));
        let mut loss = 0.0;
        for (i, item) in batch.iter().enumerate() {
            let a = item.action.index().ok_or(AgentError::WrongActionType)?;
            if a >= self.action_count {
                return Err(AgentError::WrongActionType);
            }
            let diff = q[[i, a]] - targets[i];
            loss += diff * diff;
            out_grads[[i, a]] = 2.0 * diff / n as f64;
        }
        loss /= n as f64;

        let (grads, _) = self.online.backward_batch(&cache, out_grads.view())?;
        self.online.sgd_update(&grads, self.hp.critic_lr)?;
        self.target.soft_update(&self.online, self.hp.target_rate)?;
        self.last_loss = Some(loss);
        Ok(loss)
    }
}

impl ActionSource for DdqnAgent {
    /// Epsilon-greedy: uniform with probability epsilon, greedy otherwise.
    fn select(&mut self, state: &FeatureState, rng: &mut dyn RngCore) -> ActionValue {
        if rng.random::<f64>() < self.epsilon {
            ActionValue::Discrete(rng.random_range(0..self.action_count))
        } else {
            self.greedy_action(state)
        }
    }

    /// Stores the executed transition, decays exploration once the warm-up
    /// is over, and runs one training step once the buffer is ready.
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

/// Borrowing wrapper that plays the agent's greedy policy without learning
/// or exploring; used for evaluation traces.
pub struct GreedyDdqn<'a>(pub &'a DdqnAgent);

impl ActionSource for GreedyDdqn<'_> {
    fn select(&mut self, state: &FeatureState, _rng: &mut dyn RngCore) -> ActionValue {
        self.0.greedy_action(state)
    }
}
