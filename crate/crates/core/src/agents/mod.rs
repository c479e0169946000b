//! Allocation agents: the NAF agent with lattice projection, a flat DQN
//! baseline, and the fixed equal split.

pub mod dnaf;
pub mod dqn;
pub mod naf;
pub mod noise;
pub mod replay;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::action_space::{ActionSet, Allocation, AllocationGrid};
use crate::env::{Environment, EpisodeMetrics, MetricsSink, Observation};
use crate::error::{Error, Result};
use crate::neural::{DenseNetwork, OptimizerKind};

pub use dnaf::{act, act_wolpertinger, DnafAgent};
pub use dqn::{dqn_act, dqn_train_step, DqnAgent};
pub use naf::{sync_target, train_step, NafHeads};
pub use noise::{EpsilonSchedule, NoiseDistribution, NoiseSchedule};
pub use replay::{ReplayBuffer, Transition};

/// The allocation nearest to `(W/N, ..., W/N)`, lexicographically smallest on ties.
pub fn equal_allocation(grid: &AllocationGrid) -> Result<Allocation> {
    let share = grid.total_mhz() / grid.slices() as f64;
    Ok(grid.project_knn(&vec![share; grid.slices()], 1)?.remove(0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    #[default]
    Dnaf,
    Dqn,
    Equal,
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentKind::Dnaf => "dnaf",
            AgentKind::Dqn => "dqn",
            AgentKind::Equal => "equal",
        })
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dnaf" => Ok(AgentKind::Dnaf),
            "dqn" => Ok(AgentKind::Dqn),
            "equal" => Ok(AgentKind::Equal),
            other => Err(Error::config(format!(
                "unknown agent '{other}' (expected dnaf, dqn or equal)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub discount: f64,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Episodes between target-network clones.
    pub target_sync_period: usize,
    pub minibatch_size: usize,
    pub buffer_capacity: usize,
    pub knn_k: usize,
    pub hidden: Vec<usize>,
    pub noise: NoiseDistribution,
    /// Standard deviation of the exploration noise at episode 0, in fractions of W.
    pub noise_scale: f64,
    /// Episodes over which noise (and ε for the DQN baseline) decays to zero.
    pub decay_horizon: usize,
    pub epsilon_start: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            discount: 0.9,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Sgd,
            target_sync_period: 50,
            minibatch_size: 32,
            buffer_capacity: 10_000,
            knn_k: 1,
            hidden: vec![64, 64],
            noise: NoiseDistribution::Normal,
            noise_scale: 0.15,
            decay_horizon: 3000,
            epsilon_start: 1.0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::config(format!(
                "discount must lie in [0, 1), got {}",
                self.discount
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        for (name, v) in [
            ("target_sync_period", self.target_sync_period),
            ("minibatch_size", self.minibatch_size),
            ("buffer_capacity", self.buffer_capacity),
            ("knn_k", self.knn_k),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config(
                "hidden layer sizes must be a nonempty list of positive widths",
            ));
        }
        self.noise_schedule()?;
        self.epsilon_schedule()?;
        Ok(())
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.noise, self.noise_scale, self.decay_horizon)
    }

    pub fn epsilon_schedule(&self) -> Result<EpsilonSchedule> {
        EpsilonSchedule::new(self.epsilon_start, self.decay_horizon)
    }
}

/// Any of the three allocation policies behind one interface.
#[derive(Debug, Clone)]
pub enum Agent {
    Dnaf(Box<DnafAgent>),
    Dqn(Box<DqnAgent>),
    Equal {
        grid: AllocationGrid,
        allocation: Allocation,
    },
}

impl Agent {
    pub fn new(
        kind: AgentKind,
        config: &AgentConfig,
        grid: AllocationGrid,
        obs_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        Ok(match kind {
            AgentKind::Dnaf => Agent::Dnaf(Box::new(DnafAgent::new(config, grid, obs_dim, seed)?)),
            AgentKind::Dqn => Agent::Dqn(Box::new(DqnAgent::new(config, grid, obs_dim, seed)?)),
            AgentKind::Equal => Agent::Equal {
                grid,
                allocation: equal_allocation(&grid)?,
            },
        })
    }

    pub fn kind(&self) -> AgentKind {
        match self {
            Agent::Dnaf(_) => AgentKind::Dnaf,
            Agent::Dqn(_) => AgentKind::Dqn,
            Agent::Equal { .. } => AgentKind::Equal,
        }
    }

    pub fn grid(&self) -> &AllocationGrid {
        match self {
            Agent::Dnaf(a) => a.actions().grid(),
            Agent::Dqn(a) => a.actions().grid(),
            Agent::Equal { grid, .. } => grid,
        }
    }

    /// Exploratory choice for episode `t`, with the noise scale or ε used.
    pub fn act(&mut self, state: &Observation, t: usize) -> Result<(Allocation, f64)> {
        match self {
            Agent::Dnaf(a) => a.explore(state, t),
            Agent::Dqn(a) => a.explore(state, t),
            Agent::Equal { allocation, .. } => Ok((allocation.clone(), 0.0)),
        }
    }

    /// Exploration-free choice.
    pub fn greedy(&self, state: &Observation) -> Result<Allocation> {
        match self {
            Agent::Dnaf(a) => a.greedy_action(state),
            Agent::Dqn(a) => a.greedy_action(state),
            Agent::Equal { allocation, .. } => Ok(allocation.clone()),
        }
    }

    /// Stores the transition and trains; returns the minibatch loss if a step ran.
    pub fn learn(&mut self, transition: Transition, t: usize) -> Result<Option<f64>> {
        match self {
            Agent::Dnaf(a) => a.learn(transition, t),
            Agent::Dqn(a) => a.learn(transition, t),
            Agent::Equal { .. } => Ok(None),
        }
    }

    /// Writes a checkpoint directory: `manifest.txt` plus one network file per role.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let g = self.grid();
        let mut manifest = format!(
            "kind {}\ngrid {} {} {}\n",
            self.kind(),
            g.total_mhz(),
            g.resolution_mhz(),
            g.slices()
        );
        let mut nets: Vec<(&str, &DenseNetwork)> = Vec::new();
        match self {
            Agent::Dnaf(a) => {
                let h = a.heads();
                nets.extend([
                    ("trunk", &h.trunk),
                    ("value", &h.value),
                    ("policy", &h.policy),
                    ("factor", &h.factor),
                ]);
            }
            Agent::Dqn(a) => nets.push(("q", a.network())),
            Agent::Equal { .. } => {}
        }
        for (role, net) in nets {
            let file = format!("{role}.dnaf");
            net.save(dir.join(&file))?;
            let dims: Vec<String> = net.dims().iter().map(usize::to_string).collect();
            manifest.push_str(&format!("net {role} {file} {}\n", dims.join(",")));
        }
        fs::write(dir.join("manifest.txt"), manifest)?;
        Ok(())
    }

    /// Rebuilds an agent from `save` output. Exploration and replay state
    /// start fresh from `seed`.
    pub fn load(dir: impl AsRef<Path>, config: &AgentConfig, seed: u64) -> Result<Self> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join("manifest.txt"))?;
        let mut kind = None;
        let mut grid = None;
        let mut nets: Vec<(String, DenseNetwork)> = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["kind", k] => {
                    kind = Some(
                        k.parse::<AgentKind>()
                            .map_err(|e| Error::Format(e.to_string()))?,
                    )
                }
                ["grid", w, d, n] => {
                    let parse = |s: &str| {
                        s.parse::<f64>()
                            .map_err(|_| Error::Format(format!("bad grid field '{s}'")))
                    };
                    let n = n
                        .parse::<usize>()
                        .map_err(|_| Error::Format(format!("bad slice count '{n}'")))?;
                    grid = Some(AllocationGrid::new(parse(w)?, parse(d)?, n)?);
                }
                ["net", role, file, dims] => {
                    let dims = dims
                        .split(',')
                        .map(|d| {
                            d.parse::<usize>()
                                .map_err(|_| Error::Format(format!("bad dims '{dims}'")))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    nets.push((
                        role.to_string(),
                        DenseNetwork::load(dir.join(file), Some(&dims))?,
                    ));
                }
                _ => {
                    return Err(Error::Format(format!(
                        "unrecognized manifest line '{line}'"
                    )))
                }
            }
        }
        let kind = kind.ok_or_else(|| Error::Format("manifest lacks a kind line".into()))?;
        let grid = grid.ok_or_else(|| Error::Format("manifest lacks a grid line".into()))?;
        let mut take = |role: &str| {
            nets.iter()
                .position(|(r, _)| r == role)
                .map(|i| nets.swap_remove(i).1)
                .ok_or_else(|| Error::Format(format!("manifest lacks the {role} network")))
        };
        Ok(match kind {
            AgentKind::Dnaf => {
                let heads = NafHeads::from_parts(
                    take("trunk")?,
                    take("value")?,
                    take("policy")?,
                    take("factor")?,
                )?;
                Agent::Dnaf(Box::new(DnafAgent::with_heads(config, grid, heads, seed)?))
            }
            AgentKind::Dqn => Agent::Dqn(Box::new(DqnAgent::with_network(
                config,
                ActionSet::new(grid)?,
                take("q")?,
                seed,
            )?)),
            AgentKind::Equal => Agent::Equal {
                grid,
                allocation: equal_allocation(&grid)?,
            },
        })
    }
}

/// Per-episode records of one training run.
#[derive(Debug, Clone, Default)]
pub struct TrainingLog {
    pub metrics: Vec<EpisodeMetrics>,
    /// Minibatch loss per episode, `None` while the buffer was filling.
    pub losses: Vec<Option<f64>>,
}

impl TrainingLog {
    pub fn rewards(&self) -> Vec<f64> {
        self.metrics.iter().map(|m| m.reward).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.metrics.is_empty()
    }

    /// Mean reward of the last `n` episodes (all of them if fewer).
    pub fn tail_mean_reward(&self, n: usize) -> f64 {
        let tail = &self.metrics[self.metrics.len().saturating_sub(n)..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().map(|m| m.reward).sum::<f64>() / tail.len() as f64
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.losses.iter().rev().find_map(|l| *l)
    }
}

/// Resets the environment with `seed`, then runs `episodes` rounds of
/// observe, act, step, store, train, sync. Errors carry the episode index.
pub fn run_training(
    env: &mut Environment,
    agent: &mut Agent,
    episodes: usize,
    seed: u64,
    sinks: &mut [&mut dyn MetricsSink],
) -> Result<TrainingLog> {
    let mut log = TrainingLog::default();
    if episodes == 0 {
        return Ok(log);
    }
    let grid = *env.grid();
    let mut state = env.reset(seed)?;
    for t in 0..episodes {
        let wrap = |e: Error| Error::Episode {
            episode: t,
            source: Box::new(e),
        };
        let (action, exploration) = agent.act(&state, t).map_err(wrap)?;
        let mut step = env.step(&action).map_err(wrap)?;
        step.metrics.episode = t;
        step.metrics.exploration = exploration;
        for sink in sinks.iter_mut() {
            sink.record(&step.metrics).map_err(wrap)?;
        }
        let transition = Transition::new(
            &grid,
            state,
            action,
            step.reward,
            step.next_observation.clone(),
        )
        .map_err(wrap)?;
        log.losses.push(agent.learn(transition, t).map_err(wrap)?);
        log.metrics.push(step.metrics);
        state = step.next_observation;
    }
    Ok(log)
}

/// Greedy rollout with learning disabled.
pub fn run_evaluation(
    env: &mut Environment,
    agent: &Agent,
    episodes: usize,
    seed: u64,
    sinks: &mut [&mut dyn MetricsSink],
) -> Result<Vec<EpisodeMetrics>> {
    let mut out = Vec::with_capacity(episodes);
    if episodes == 0 {
        return Ok(out);
    }
    let mut state = env.reset(seed)?;
    for t in 0..episodes {
        let wrap = |e: Error| Error::Episode {
            episode: t,
            source: Box::new(e),
        };
        let action = agent.greedy(&state).map_err(wrap)?;
        let mut step = env.step(&action).map_err(wrap)?;
        step.metrics.episode = t;
        for sink in sinks.iter_mut() {
            sink.record(&step.metrics).map_err(wrap)?;
        }
        state = step.next_observation;
        out.push(step.metrics);
    }
    Ok(out)
}

/// First episode from which the trailing `window`-episode mean reward stays
/// at or above `fraction` of `final_level` for the rest of the run. `None`
/// when the run is shorter than the window or never settles.
pub fn settle_episode(
    rewards: &[f64],
    window: usize,
    fraction: f64,
    final_level: f64,
) -> Option<usize> {
    if window == 0 || rewards.len() < window {
        return None;
    }
    let threshold = fraction * final_level;
    let mut sum: f64 = rewards[..window].iter().sum();
    let mut means = vec![sum / window as f64];
    for t in window..rewards.len() {
        sum += rewards[t] - rewards[t - window];
        means.push(sum / window as f64);
    }
    // means[i] covers episodes i..i+window; report the episode ending the window.
    let mut settled = None;
    for (i, m) in means.iter().enumerate().rev() {
        if *m >= threshold {
            settled = Some(i + window - 1);
        } else {
            break;
        }
    }
    settled
}
