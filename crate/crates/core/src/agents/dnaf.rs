//! The NAF agent acting on the discrete allocation lattice through k-nn projection.

use crate::action_space::{ActionSet, Allocation, AllocationGrid};
use crate::env::Observation;
use crate::error::{Error, Result};
use crate::rng::{stream, Rng, StreamTag};

use super::naf::{sync_target, train_step, NafHeads, NafOptimizers};
use super::noise::NoiseSchedule;
use super::replay::{ReplayBuffer, Transition};
use super::AgentConfig;

/// Scales a proto-action in fractions of W to MHz and returns the `k` nearest
/// valid allocations.
fn candidates(actions: &ActionSet, proto: &[f64], k: usize) -> Result<Vec<Allocation>> {
    let w = actions.grid().total_mhz();
    let mhz: Vec<f64> = proto.iter().map(|p| p * w).collect();
    actions.project_knn(&mhz, k)
}

/// Proto-action `μ(s) + noise` and its nearest valid allocation.
pub fn act<R: rand::Rng + ?Sized>(
    heads: &NafHeads,
    state: &Observation,
    t: usize,
    schedule: &NoiseSchedule,
    actions: &ActionSet,
    rng: &mut R,
) -> Result<(Vec<f64>, Allocation)> {
    let mut proto = heads.mu(state.as_slice())?;
    let noise = schedule.sample(t, proto.len(), rng);
    proto.iter_mut().zip(&noise).for_each(|(p, n)| *p += n);
    let chosen = candidates(actions, &proto, 1)?.remove(0);
    Ok((proto, chosen))
}

/// Among the `k` allocations nearest to `proto`, the one with the largest Q;
/// the earliest candidate wins ties.
pub fn select_wolpertinger(
    heads: &NafHeads,
    state: &Observation,
    proto: &[f64],
    actions: &ActionSet,
    k: usize,
) -> Result<Allocation> {
    let mut cands = candidates(actions, proto, k)?;
    if cands.len() == 1 {
        return Ok(cands.remove(0));
    }
    let out = heads.evaluate(state.as_slice())?;
    let grid = actions.grid();
    let mut best = 0;
    let mut best_q = f64::NEG_INFINITY;
    for (i, c) in cands.iter().enumerate() {
        let q = out.q_value(&c.fractions(grid))?;
        if q > best_q {
            best = i;
            best_q = q;
        }
    }
    Ok(cands.swap_remove(best))
}

/// Noise-free Wolpertinger choice around `μ(s)`.
pub fn act_wolpertinger(
    heads: &NafHeads,
    state: &Observation,
    actions: &ActionSet,
    k: usize,
) -> Result<Allocation> {
    let mu = heads.mu(state.as_slice())?;
    select_wolpertinger(heads, state, &mu, actions, k)
}

#[derive(Debug, Clone)]
pub struct DnafAgent {
    config: AgentConfig,
    actions: ActionSet,
    heads: NafHeads,
    target: NafHeads,
    optimizers: NafOptimizers,
    buffer: ReplayBuffer,
    schedule: NoiseSchedule,
    explore_rng: Rng,
    replay_rng: Rng,
    last_proto: Vec<f64>,
}

impl DnafAgent {
    pub fn new(
        config: &AgentConfig,
        grid: AllocationGrid,
        obs_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let heads = NafHeads::new(
            obs_dim,
            grid.slices(),
            &config.hidden,
            &mut stream(seed, StreamTag::Init, 0),
        )?;
        Self::with_heads(config, grid, heads, seed)
    }

    pub fn with_heads(
        config: &AgentConfig,
        grid: AllocationGrid,
        heads: NafHeads,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if heads.action_dim() != grid.slices() {
            return Err(Error::shape(format!(
                "heads act on {} slices, grid has {}",
                heads.action_dim(),
                grid.slices()
            )));
        }
        Ok(Self {
            actions: ActionSet::new(grid)?,
            target: heads.clone(),
            heads,
            optimizers: NafOptimizers::new(config.optimizer, config.learning_rate)?,
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            schedule: config.noise_schedule()?,
            explore_rng: stream(seed, StreamTag::Exploration, 0),
            replay_rng: stream(seed, StreamTag::Replay, 0),
            config: config.clone(),
            last_proto: Vec::new(),
        })
    }

    pub fn heads(&self) -> &NafHeads {
        &self.heads
    }

    pub fn target_heads(&self) -> &NafHeads {
        &self.target
    }

    pub fn actions(&self) -> &ActionSet {
        &self.actions
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    /// Proto-action behind the most recent exploratory choice.
    pub fn last_proto(&self) -> &[f64] {
        &self.last_proto
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub(crate) fn explore(&mut self, state: &Observation, t: usize) -> Result<(Allocation, f64)> {
        let (proto, chosen) = if self.config.knn_k <= 1 {
            act(
                &self.heads,
                state,
                t,
                &self.schedule,
                &self.actions,
                &mut self.explore_rng,
            )?
        } else {
            let (proto, _) = act(
                &self.heads,
                state,
                t,
                &self.schedule,
                &self.actions,
                &mut self.explore_rng,
            )?;
            let chosen = select_wolpertinger(&self.heads, state, &proto, &self.actions, self.k())?;
            (proto, chosen)
        };
        self.last_proto = proto;
        Ok((chosen, self.schedule.scale_at(t)))
    }

    fn k(&self) -> usize {
        self.config.knn_k.min(self.actions.len())
    }

    pub(crate) fn greedy_action(&self, state: &Observation) -> Result<Allocation> {
        act_wolpertinger(&self.heads, state, &self.actions, self.k())
    }

    /// Stores the transition, trains once the buffer can fill a minibatch,
    /// and syncs the target after every `C`-th episode.
    pub(crate) fn learn(&mut self, transition: Transition, t: usize) -> Result<Option<f64>> {
        self.buffer.push(transition);
        let mut loss = None;
        if self.buffer.len() >= self.config.minibatch_size {
            let batch = self
                .buffer
                .sample(self.config.minibatch_size, &mut self.replay_rng)?;
            loss = Some(train_step(
                &mut self.heads,
                &self.target,
                &batch,
                &mut self.optimizers,
                self.config.discount,
            )?);
        }
        if (t + 1).is_multiple_of(self.config.target_sync_period) {
            sync_target(&self.heads, &mut self.target);
        }
        Ok(loss)
    }
}
