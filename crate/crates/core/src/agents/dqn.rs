//! Flat deep Q-network baseline: one output per enumerated allocation.

use crate::action_space::{ActionSet, Allocation, AllocationGrid};
use crate::env::Observation;
use crate::error::{Error, Result};
use crate::neural::{apply_gradients, DenseNetwork, OptimizerState};
use crate::rng::{stream, Rng, StreamTag};

use super::noise::EpsilonSchedule;
use super::replay::{ReplayBuffer, Transition};
use super::AgentConfig;

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy action index.
pub fn dqn_act<R: rand::Rng + ?Sized>(
    q_net: &DenseNetwork,
    state: &Observation,
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    let n = q_net.output_dim();
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..n));
    }
    Ok(argmax(&q_net.forward(state.as_slice())?))
}

/// One step on `mean((r + γ max_a' Q'(s', a') - Q(s, a))²)`.
pub fn dqn_train_step(
    q_net: &mut DenseNetwork,
    target: &DenseNetwork,
    batch: &[&Transition],
    optimizer: &mut OptimizerState,
    discount: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Argument("empty minibatch".into()));
    }
    let outputs = q_net.output_dim();
    let scale = 1.0 / batch.len() as f64;
    let mut grads = q_net.zero_gradients();
    let mut loss = 0.0;
    for t in batch {
        if t.action_index >= outputs {
            return Err(Error::shape(format!(
                "action index {} outside {outputs} outputs",
                t.action_index
            )));
        }
        let next = target.forward(t.next_state.as_slice())?;
        let y = t.reward + discount * next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let trace = q_net.forward_trace(t.state.as_slice())?;
        let err = y - trace.output()[t.action_index];
        loss += scale * err * err;
        let mut upstream = vec![0.0; outputs];
        upstream[t.action_index] = -2.0 * scale * err;
        let (g, _) = q_net.backward_trace(&trace, &upstream)?;
        grads.add_assign(&g);
    }
    if !loss.is_finite() {
        return Err(Error::numeric(format!("non-finite loss {loss}")));
    }
    apply_gradients(q_net, optimizer, &grads)?;
    Ok(loss)
}

#[derive(Debug, Clone)]
pub struct DqnAgent {
    config: AgentConfig,
    actions: ActionSet,
    q_net: DenseNetwork,
    target: DenseNetwork,
    optimizer: OptimizerState,
    buffer: ReplayBuffer,
    epsilon: EpsilonSchedule,
    explore_rng: Rng,
    replay_rng: Rng,
}

impl DqnAgent {
    pub fn new(
        config: &AgentConfig,
        grid: AllocationGrid,
        obs_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let actions = ActionSet::new(grid)?;
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(&config.hidden);
        dims.push(actions.len());
        let q_net = DenseNetwork::new(&dims, &mut stream(seed, StreamTag::Init, 0))?;
        Self::with_network(config, actions, q_net, seed)
    }

    pub fn with_network(
        config: &AgentConfig,
        actions: ActionSet,
        q_net: DenseNetwork,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if q_net.output_dim() != actions.len() {
            return Err(Error::shape(format!(
                "network has {} outputs for {} actions",
                q_net.output_dim(),
                actions.len()
            )));
        }
        Ok(Self {
            target: q_net.clone(),
            q_net,
            actions,
            optimizer: OptimizerState::new(config.optimizer, config.learning_rate)?,
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            epsilon: config.epsilon_schedule()?,
            explore_rng: stream(seed, StreamTag::Exploration, 0),
            replay_rng: stream(seed, StreamTag::Replay, 0),
            config: config.clone(),
        })
    }

    pub fn network(&self) -> &DenseNetwork {
        &self.q_net
    }

    pub fn target_network(&self) -> &DenseNetwork {
        &self.target
    }

    pub fn actions(&self) -> &ActionSet {
        &self.actions
    }

    pub(crate) fn explore(&mut self, state: &Observation, t: usize) -> Result<(Allocation, f64)> {
        let eps = self.epsilon.epsilon_at(t);
        let idx = dqn_act(&self.q_net, state, eps, &mut self.explore_rng)?;
        Ok((self.actions.actions()[idx].clone(), eps))
    }

    pub(crate) fn greedy_action(&self, state: &Observation) -> Result<Allocation> {
        let idx = argmax(&self.q_net.forward(state.as_slice())?);
        Ok(self.actions.actions()[idx].clone())
    }

    pub(crate) fn learn(&mut self, transition: Transition, t: usize) -> Result<Option<f64>> {
        self.buffer.push(transition);
        let mut loss = None;
        if self.buffer.len() >= self.config.minibatch_size {
            let batch = self
                .buffer
                .sample(self.config.minibatch_size, &mut self.replay_rng)?;
            loss = Some(dqn_train_step(
                &mut self.q_net,
                &self.target,
                &batch,
                &mut self.optimizer,
                self.config.discount,
            )?);
        }
        if (t + 1).is_multiple_of(self.config.target_sync_period) {
            self.target.clone_from(&self.q_net);
        }
        Ok(loss)
    }
}
