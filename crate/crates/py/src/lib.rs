//! Python bindings: allocation grids, the slicing environment, agents and traffic summaries.
//!
//! Configuration is passed as TOML text plus `section.key=value` overrides,
//! exactly as the command line reads it.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use slicing_core::action_space::{ActionSet, Allocation, AllocationGrid};
use slicing_core::agents::{
    equal_allocation, run_training, settle_episode, Agent as CoreAgent, AgentKind,
};
use slicing_core::config::RunConfig;
use slicing_core::env::{Environment as CoreEnvironment, EpisodeMetrics, Observation};
use slicing_core::rng::{stream, StreamTag};
use slicing_core::traffic::{summarize, SliceTraffic};
use slicing_core::Error;

fn to_py(e: Error) -> PyErr {
    match e.root() {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ if e.is_config() => PyValueError::new_err(e.to_string()),
        Error::InvalidAction(_) | Error::Shape(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_config(config: &str, overrides: Vec<String>) -> PyResult<RunConfig> {
    RunConfig::parse(config, &overrides).map_err(to_py)
}

fn metrics_dict<'py>(py: Python<'py>, m: &EpisodeMetrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("episode", m.episode)?;
    d.set_item("reward", m.reward)?;
    d.set_item("se", m.se)?;
    d.set_item("qoe_aggregate", m.qoe.aggregate)?;
    d.set_item("qoe", m.qoe.per_slice.clone())?;
    d.set_item("allocation_mhz", m.allocation_mhz.clone())?;
    d.set_item("exploration", m.exploration)?;
    Ok(d)
}

/// Valid allocations of `total_mhz` into `slices` positive multiples of `resolution_mhz`.
#[pyclass(module = "slicing")]
struct Grid {
    set: ActionSet,
}

#[pymethods]
impl Grid {
    #[new]
    fn new(total_mhz: f64, resolution_mhz: f64, slices: usize) -> PyResult<Self> {
        let grid = AllocationGrid::new(total_mhz, resolution_mhz, slices).map_err(to_py)?;
        Ok(Self {
            set: ActionSet::new(grid).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn count(total_mhz: f64, resolution_mhz: f64, slices: usize) -> PyResult<u128> {
        Ok(AllocationGrid::new(total_mhz, resolution_mhz, slices)
            .map_err(to_py)?
            .action_count())
    }

    fn __len__(&self) -> usize {
        self.set.len()
    }

    /// Every allocation in MHz, in enumeration order.
    fn actions(&self) -> Vec<Vec<f64>> {
        let grid = self.set.grid();
        self.set
            .actions()
            .iter()
            .map(|a| a.bandwidths_mhz(grid))
            .collect()
    }

    /// The `k` allocations nearest to `proto` (MHz), closest first.
    #[pyo3(signature = (proto, k = 1))]
    fn nearest(&self, proto: Vec<f64>, k: usize) -> PyResult<Vec<Vec<f64>>> {
        let grid = self.set.grid();
        Ok(self
            .set
            .project_knn(&proto, k)
            .map_err(to_py)?
            .iter()
            .map(|a| a.bandwidths_mhz(grid))
            .collect())
    }

    fn index(&self, allocation: Vec<f64>) -> PyResult<usize> {
        let grid = self.set.grid();
        grid.action_index(&grid.allocation_from_mhz(&allocation).map_err(to_py)?)
            .map_err(to_py)
    }

    fn equal_allocation(&self) -> PyResult<Vec<f64>> {
        let grid = self.set.grid();
        Ok(equal_allocation(grid).map_err(to_py)?.bandwidths_mhz(grid))
    }
}

/// One allocation decision per `step`; each step simulates a full adjustment interval.
#[pyclass(module = "slicing")]
struct Environment {
    env: CoreEnvironment,
}

#[pymethods]
impl Environment {
    #[new]
    #[pyo3(signature = (config = "", overrides = Vec::new()))]
    fn new(config: &str, overrides: Vec<String>) -> PyResult<Self> {
        let config = parse_config(config, overrides)?;
        Ok(Self {
            env: CoreEnvironment::new(config.env_config().map_err(to_py)?).map_err(to_py)?,
        })
    }

    #[getter]
    fn slice_names(&self) -> Vec<String> {
        self.env.config().slice_names()
    }

    #[getter]
    fn observation_dim(&self) -> usize {
        self.env.observation_dim()
    }

    fn grid(&self) -> PyResult<Grid> {
        Ok(Grid {
            set: ActionSet::new(*self.env.grid()).map_err(to_py)?,
        })
    }

    fn reset(&mut self, seed: u64) -> PyResult<Vec<f64>> {
        Ok(self.env.reset(seed).map_err(to_py)?.0)
    }

    /// Applies an allocation in MHz; returns `(observation, reward, metrics)`.
    fn step<'py>(
        &mut self,
        py: Python<'py>,
        allocation: Vec<f64>,
    ) -> PyResult<(Vec<f64>, f64, Bound<'py, PyDict>)> {
        let action: Allocation = self
            .env
            .grid()
            .allocation_from_mhz(&allocation)
            .map_err(to_py)?;
        let step = self.env.step(&action).map_err(to_py)?;
        let metrics = metrics_dict(py, &step.metrics)?;
        Ok((step.next_observation.0, step.reward, metrics))
    }
}

/// A trainable agent bound to the environment described by its config.
#[pyclass(module = "slicing")]
struct Agent {
    agent: CoreAgent,
    config: RunConfig,
}

#[pymethods]
impl Agent {
    /// `kind` overrides `run.agent` when given ("dnaf", "dqn" or "equal").
    #[new]
    #[pyo3(signature = (config = "", overrides = Vec::new(), kind = None, seed = None))]
    fn new(
        config: &str,
        overrides: Vec<String>,
        kind: Option<&str>,
        seed: Option<u64>,
    ) -> PyResult<Self> {
        let mut config = parse_config(config, overrides)?;
        if let Some(k) = kind {
            config.run.agent = k.parse::<AgentKind>().map_err(to_py)?;
        }
        if let Some(s) = seed {
            config.run.seed = s;
        }
        let env = config.env_config().map_err(to_py)?;
        let dim = env.slices.len();
        let agent = CoreAgent::new(
            config.run.agent,
            &config.agent,
            env.grid,
            dim,
            config.run.seed,
        )
        .map_err(to_py)?;
        Ok(Self { agent, config })
    }

    #[staticmethod]
    #[pyo3(signature = (path, config = "", overrides = Vec::new(), seed = 0))]
    fn load(path: &str, config: &str, overrides: Vec<String>, seed: u64) -> PyResult<Self> {
        let config = parse_config(config, overrides)?;
        let agent = CoreAgent::load(path, &config.agent, seed).map_err(to_py)?;
        Ok(Self { agent, config })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.agent.save(path).map_err(to_py)
    }

    #[getter]
    fn kind(&self) -> String {
        self.agent.kind().to_string()
    }

    /// Greedy allocation in MHz for an observation.
    fn act(&self, observation: Vec<f64>) -> PyResult<Vec<f64>> {
        let a = self
            .agent
            .greedy(&Observation(observation))
            .map_err(to_py)?;
        Ok(a.bandwidths_mhz(self.agent.grid()))
    }

    /// Trains on a fresh environment; returns per-episode rewards, settle episode and last loss.
    #[pyo3(signature = (episodes = None, seed = None))]
    fn train<'py>(
        &mut self,
        py: Python<'py>,
        episodes: Option<usize>,
        seed: Option<u64>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let episodes = episodes.unwrap_or(self.config.run.episodes);
        let seed = seed.unwrap_or(self.config.run.seed);
        let mut env =
            CoreEnvironment::new(self.config.env_config().map_err(to_py)?).map_err(to_py)?;
        let agent = &mut self.agent;
        let log = py
            .detach(|| run_training(&mut env, agent, episodes, seed, &mut []))
            .map_err(to_py)?;
        let rewards = log.rewards();
        let window = rewards.len().min(200);
        let final_mean =
            rewards[rewards.len() - window..].iter().sum::<f64>() / window.max(1) as f64;
        let d = PyDict::new(py);
        d.set_item("rewards", rewards.clone())?;
        d.set_item("final_mean_reward", final_mean)?;
        d.set_item(
            "settle_episode",
            settle_episode(&rewards, 100, 0.95, final_mean),
        )?;
        d.set_item("last_loss", log.last_loss())?;
        Ok(d)
    }
}

/// Empirical moments of one slice's samplers under the given config.
#[pyfunction]
#[pyo3(signature = (slice, samples = 100_000, seed = 1, config = "", overrides = Vec::new()))]
fn traffic_stats<'py>(
    py: Python<'py>,
    slice: &str,
    samples: usize,
    seed: u64,
    config: &str,
    overrides: Vec<String>,
) -> PyResult<Bound<'py, PyDict>> {
    let config = parse_config(config, overrides)?;
    let spec = config
        .slices()
        .map_err(to_py)?
        .into_iter()
        .find(|s| s.name.eq_ignore_ascii_case(slice))
        .ok_or_else(|| PyValueError::new_err(format!("no slice named '{slice}'")))?;
    let traffic = SliceTraffic::new(spec.clone()).map_err(to_py)?;
    let out = PyDict::new(py);
    for (i, (label, sampler, model_mean)) in [
        (
            "inter_arrival_ms",
            traffic.inter_arrival(),
            spec.inter_arrival.mean_ms(),
        ),
        (
            "packet_bytes",
            traffic.packet_size(),
            spec.packet_size.mean_bytes(),
        ),
    ]
    .into_iter()
    .enumerate()
    {
        let s = summarize(
            sampler,
            samples,
            &mut stream(seed, StreamTag::Calibration, i as u32),
        );
        let d = PyDict::new(py);
        d.set_item("mean", s.mean)?;
        d.set_item("std", s.std)?;
        d.set_item("min", s.min)?;
        d.set_item("max", s.max)?;
        d.set_item("model_mean", model_mean)?;
        out.set_item(label, d)?;
    }
    Ok(out)
}

#[pymodule]
fn slicing(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Grid>()?;
    m.add_class::<Environment>()?;
    m.add_class::<Agent>()?;
    m.add_function(wrap_pyfunction!(traffic_stats, m)?)?;
    Ok(())
}
