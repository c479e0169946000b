//! The allocation environment.
//!
//! One step is one adjustment interval: the agent picks an allocation, the
//! simulator runs it for an interval, and the reward is the weighted sum of
//! spectrum efficiency and QoE satisfaction over that interval. The
//! observation is the per-slice packet demand of the interval just simulated.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::action_space::{Allocation, AllocationGrid};
use crate::agents::equal_allocation;
use crate::error::{Error, Result};
use crate::link_sim::{ChannelModel, IntervalStats, Simulator, SlotConfig, SlotTrace};
use crate::traffic::SliceSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    /// Weight of spectrum efficiency.
    pub se_weight: f64,
    /// Weight of the QoE satisfaction ratio.
    pub qoe_weight: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            se_weight: 0.01,
            qoe_weight: 1.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !(ok(self.se_weight) && ok(self.qoe_weight))
            || (self.se_weight == 0.0 && self.qoe_weight == 0.0)
        {
            return Err(Error::config(format!(
                "reward weights must be nonnegative and not both zero, got {} and {}",
                self.se_weight, self.qoe_weight
            )));
        }
        Ok(())
    }

    pub fn reward(&self, se: f64, qoe: f64) -> f64 {
        self.se_weight * se + self.qoe_weight * qoe
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandUnit {
    #[default]
    Packets,
    Bytes,
}

/// Per-slice demand of the last interval, divided by per-slice normalizers.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Delivered bits per second per Hertz of total bandwidth.
pub fn compute_se(stats: &IntervalStats, total_hz: f64, interval_s: f64) -> f64 {
    stats.delivered_bits() / (total_hz * interval_s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QoeReport {
    pub per_slice: Vec<f64>,
    pub aggregate: f64,
}

/// Satisfied over arrived packets per slice, and their arrival-weighted mean.
///
/// A slice with no arrivals scores 1. Packets admitted in an earlier interval
/// can complete in this one, so each ratio is capped at 1.
pub fn compute_qoe(stats: &IntervalStats) -> QoeReport {
    let ratio = |satisfied: u64, arrived: u64| {
        if arrived == 0 {
            1.0
        } else {
            (satisfied as f64 / arrived as f64).min(1.0)
        }
    };
    let per_slice: Vec<f64> = stats
        .slices
        .iter()
        .map(|s| ratio(s.satisfied_packets, s.arrived_packets))
        .collect();
    let total: u64 = stats.slices.iter().map(|s| s.arrived_packets).sum();
    let aggregate = if total == 0 {
        1.0
    } else {
        stats
            .slices
            .iter()
            .zip(&per_slice)
            .map(|(s, q)| s.arrived_packets as f64 * q)
            .sum::<f64>()
            / total as f64
    };
    QoeReport {
        per_slice,
        aggregate,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub reward: f64,
    pub se: f64,
    pub qoe: QoeReport,
    pub allocation_mhz: Vec<f64>,
    /// Noise scale (NAF agent) or epsilon (DQN) used to pick the action.
    pub exploration: f64,
    pub stats: IntervalStats,
}

/// Column order of the metrics CSV:
/// `episode,reward,se,qoe_aggregate,qoe_<slice>...,w_<slice>...,exploration`.
pub fn metrics_header(slice_names: &[String]) -> String {
    let mut cols = vec![
        "episode".to_string(),
        "reward".into(),
        "se".into(),
        "qoe_aggregate".into(),
    ];
    cols.extend(slice_names.iter().map(|n| format!("qoe_{n}")));
    cols.extend(slice_names.iter().map(|n| format!("w_{n}")));
    cols.push("exploration".into());
    cols.join(",")
}

impl EpisodeMetrics {
    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.episode.to_string(),
            self.reward.to_string(),
            self.se.to_string(),
            self.qoe.aggregate.to_string(),
        ];
        cols.extend(self.qoe.per_slice.iter().map(f64::to_string));
        cols.extend(self.allocation_mhz.iter().map(f64::to_string));
        cols.push(self.exploration.to_string());
        cols.join(",")
    }
}

/// Receives one record per episode.
pub trait MetricsSink {
    fn record(&mut self, metrics: &EpisodeMetrics) -> Result<()>;
}

impl MetricsSink for Vec<EpisodeMetrics> {
    fn record(&mut self, metrics: &EpisodeMetrics) -> Result<()> {
        self.push(metrics.clone());
        Ok(())
    }
}

/// Writes the metrics CSV, header first.
pub struct CsvSink<W: Write> {
    out: W,
}

impl<W: Write> CsvSink<W> {
    pub fn new(mut out: W, slice_names: &[String]) -> Result<Self> {
        writeln!(out, "{}", metrics_header(slice_names))?;
        Ok(Self { out })
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> MetricsSink for CsvSink<W> {
    fn record(&mut self, metrics: &EpisodeMetrics) -> Result<()> {
        writeln!(self.out, "{}", metrics.csv_row())?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub next_observation: Observation,
    pub reward: f64,
    pub metrics: EpisodeMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub grid: AllocationGrid,
    pub slices: Vec<SliceSpec>,
    pub slots: SlotConfig,
    pub channel: ChannelModel,
    pub weights: RewardWeights,
    pub demand_unit: DemandUnit,
    /// Per-slice demand divisors; defaults to the expected demand per interval.
    pub demand_normalizers: Option<Vec<f64>>,
}

impl EnvConfig {
    pub fn new(grid: AllocationGrid, slices: Vec<SliceSpec>) -> Self {
        Self {
            grid,
            slices,
            slots: SlotConfig::default(),
            channel: ChannelModel::default(),
            weights: RewardWeights::default(),
            demand_unit: DemandUnit::Packets,
            demand_normalizers: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.slices.len() != self.grid.slices() {
            return Err(Error::config(format!(
                "{} slices configured for a grid of {}",
                self.slices.len(),
                self.grid.slices()
            )));
        }
        let mut names: Vec<&str> = self.slices.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("slice names must be distinct"));
        }
        for s in &self.slices {
            s.validate()?;
        }
        self.slots.validate()?;
        self.channel.validate(self.slices.len())?;
        self.weights.validate()?;
        if let Some(n) = &self.demand_normalizers {
            if n.len() != self.slices.len() || n.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::config(format!(
                    "demand_normalizers needs {} positive entries",
                    self.slices.len()
                )));
            }
        }
        Ok(())
    }

    pub fn slice_names(&self) -> Vec<String> {
        self.slices.iter().map(|s| s.name.clone()).collect()
    }

    /// Divisors applied to raw demand; a slice expected to be silent gets 1.
    pub fn normalizers(&self) -> Vec<f64> {
        if let Some(n) = &self.demand_normalizers {
            return n.clone();
        }
        let interval_ms = self.slots.interval_ms();
        self.slices
            .iter()
            .map(|s| {
                let packets = s.user_count as f64 * s.expected_packets_per_user(interval_ms);
                let expected = match self.demand_unit {
                    DemandUnit::Packets => packets,
                    DemandUnit::Bytes => packets * s.packet_size.mean_bytes(),
                };
                if expected > 0.0 && expected.is_finite() {
                    expected
                } else {
                    1.0
                }
            })
            .collect()
    }
}

pub struct Environment {
    config: EnvConfig,
    normalizers: Vec<f64>,
    sim: Option<Simulator>,
    steps: usize,
    trace: bool,
}

impl Environment {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let normalizers = config.normalizers();
        Ok(Self {
            config,
            normalizers,
            sim: None,
            steps: 0,
            trace: false,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn grid(&self) -> &AllocationGrid {
        &self.config.grid
    }

    pub fn observation_dim(&self) -> usize {
        self.config.slices.len()
    }

    /// Records per-slot traces from the next reset on; see `take_trace`.
    pub fn set_trace(&mut self, enabled: bool) {
        self.trace = enabled;
    }

    pub fn take_trace(&mut self) -> Vec<SlotTrace> {
        self.sim
            .as_mut()
            .map(Simulator::take_trace)
            .unwrap_or_default()
    }

    /// Fresh queues and traffic from `seed`, then one warm-up interval under
    /// the equal allocation to produce the first observation.
    pub fn reset(&mut self, seed: u64) -> Result<Observation> {
        let c = &self.config;
        let mut sim = Simulator::new(c.grid, &c.slices, c.slots, c.channel.clone(), seed)?;
        if self.trace {
            sim.enable_trace();
        }
        let stats = sim.run_interval(&equal_allocation(&c.grid)?)?;
        self.sim = Some(sim);
        self.steps = 0;
        Ok(self.observe(&stats))
    }

    pub fn step(&mut self, action: &Allocation) -> Result<StepResult> {
        let sim = self
            .sim
            .as_mut()
            .ok_or_else(|| Error::Argument("step called before reset".into()))?;
        let stats = sim.run_interval(action)?;
        let c = &self.config;
        let se = compute_se(
            &stats,
            c.grid.total_mhz() * 1e6,
            c.slots.interval_ms() / 1000.0,
        );
        let qoe = compute_qoe(&stats);
        let reward = c.weights.reward(se, qoe.aggregate);
        let next_observation = self.observe(&stats);
        let metrics = EpisodeMetrics {
            episode: self.steps,
            reward,
            se,
            qoe,
            allocation_mhz: action.bandwidths_mhz(&c.grid),
            exploration: 0.0,
            stats,
        };
        self.steps += 1;
        Ok(StepResult {
            next_observation,
            reward,
            metrics,
        })
    }

    fn observe(&self, stats: &IntervalStats) -> Observation {
        Observation(
            stats
                .slices
                .iter()
                .zip(&self.normalizers)
                .map(|(s, n)| match self.config.demand_unit {
                    DemandUnit::Packets => s.arrived_packets as f64 / n,
                    DemandUnit::Bytes => s.arrived_bits / 8.0 / n,
                })
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link_sim::{Fading, SliceStats};
    use crate::traffic::{default_scenario, InterArrivalModel, PacketSizeModel};

    fn stats(slices: Vec<(u64, u64)>) -> IntervalStats {
        IntervalStats {
            interval_ms: 1000.0,
            slices: slices
                .into_iter()
                .map(|(arrived, satisfied)| SliceStats {
                    arrived_packets: arrived,
                    satisfied_packets: satisfied,
                    delivered_packets: satisfied,
                    ..SliceStats::default()
                })
                .collect(),
        }
    }

    #[test]
    fn reward_arithmetic() {
        let w = RewardWeights {
            se_weight: 0.01,
            qoe_weight: 1.0,
        };
        assert!((w.reward(2.0, 0.5) - 0.52).abs() < 1e-15);
        assert!(RewardWeights {
            se_weight: 0.0,
            qoe_weight: 0.0
        }
        .validate()
        .is_err());
        assert!(RewardWeights {
            se_weight: -1.0,
            qoe_weight: 1.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn se_examples() {
        let mut s = stats(vec![(0, 0)]);
        assert_eq!(compute_se(&s, 10e6, 1.0), 0.0);
        s.slices[0].delivered_bits = 1e7;
        assert_eq!(compute_se(&s, 10e6, 1.0), 1.0);
    }

    #[test]
    fn qoe_examples() {
        let all = compute_qoe(&stats(vec![(4, 4), (2, 2)]));
        assert_eq!(all.aggregate, 1.0);
        let partial = compute_qoe(&stats(vec![(4, 3), (0, 0), (0, 0)]));
        assert_eq!(partial.per_slice, vec![0.75, 1.0, 1.0]);
        assert_eq!(partial.aggregate, 0.75);
        // One of six dropped by the stall rule, the other five satisfied.
        let stalled = compute_qoe(&stats(vec![(6, 5)]));
        assert_eq!(stalled.aggregate, 5.0 / 6.0);
        let weighted = compute_qoe(&stats(vec![(10, 10), (30, 0)]));
        assert_eq!(weighted.aggregate, 0.25);
        assert_eq!(compute_qoe(&stats(vec![(1, 3)])).aggregate, 1.0);
    }

    #[test]
    fn csv_layout() {
        let names = vec!["volte".to_string(), "video".to_string()];
        assert_eq!(
            metrics_header(&names),
            "episode,reward,se,qoe_aggregate,qoe_volte,qoe_video,w_volte,w_video,exploration"
        );
        let m = EpisodeMetrics {
            episode: 3,
            reward: 0.52,
            se: 2.0,
            qoe: QoeReport {
                per_slice: vec![0.5, 1.0],
                aggregate: 0.5,
            },
            allocation_mhz: vec![3.2, 6.8],
            exploration: 0.15,
            stats: IntervalStats::default(),
        };
        assert_eq!(m.csv_row(), "3,0.52,2,0.5,0.5,1,3.2,6.8,0.15");
        let mut sink = CsvSink::new(Vec::new(), &names).unwrap();
        sink.record(&m).unwrap();
        assert_eq!(
            String::from_utf8(sink.into_inner())
                .unwrap()
                .lines()
                .count(),
            2
        );
    }

    fn solo(first_arrival_ms: f64) -> EnvConfig {
        let spec = SliceSpec {
            name: "volte".into(),
            user_count: 1,
            inter_arrival: InterArrivalModel::Constant {
                period_ms: f64::INFINITY,
            },
            packet_size: PacketSizeModel::Constant { bytes: 40.0 },
            sla_rate_bps: 51e3,
            sla_latency_ms: 10.0,
            first_arrival_ms,
        };
        let mut c = EnvConfig::new(AllocationGrid::new(10.0, 1.0, 1).unwrap(), vec![spec]);
        c.channel.fading = Fading::Constant { gain: 1.0 };
        c
    }

    #[test]
    fn silent_environment() {
        let mut c = solo(f64::INFINITY);
        c.weights = RewardWeights {
            se_weight: 0.1,
            qoe_weight: 0.7,
        };
        let mut env = Environment::new(c).unwrap();
        assert_eq!(env.reset(1).unwrap(), Observation(vec![0.0]));
        let a = env.grid().allocation(vec![10]).unwrap();
        let r = env.step(&a).unwrap();
        assert_eq!(
            (r.metrics.se, r.metrics.qoe.aggregate, r.reward),
            (0.0, 1.0, 0.7)
        );
    }

    #[test]
    fn single_packet_reward() {
        // The packet arrives at the start of the first stepped interval.
        let mut env = Environment::new(solo(1000.0)).unwrap();
        env.reset(1).unwrap();
        let a = env.grid().allocation(vec![10]).unwrap();
        let r = env.step(&a).unwrap();
        let w_hz = 10e6;
        assert_eq!(r.metrics.se, 320.0 / w_hz);
        assert_eq!(r.reward, 0.01 * (320.0 / w_hz) + 1.0);
        assert_eq!(r.metrics.stats.slices[0].satisfied_packets, 1);
    }

    #[test]
    fn step_before_reset_and_bad_action() {
        let mut env = Environment::new(solo(0.0)).unwrap();
        let a = env.grid().allocation(vec![10]).unwrap();
        assert!(env.step(&a).is_err());
        env.reset(0).unwrap();
        let foreign = AllocationGrid::new(4.0, 1.0, 1)
            .unwrap()
            .allocation(vec![4])
            .unwrap();
        assert!(matches!(env.step(&foreign), Err(Error::InvalidAction(_))));
    }

    #[test]
    fn invalid_scenario_is_config_error() {
        let mut c = EnvConfig::new(
            AllocationGrid::new(10.0, 1.0, 2).unwrap(),
            default_scenario(),
        );
        assert!(matches!(Environment::new(c.clone()), Err(Error::Config(_))));
        c.grid = AllocationGrid::new(10.0, 1.0, 3).unwrap();
        c.slices[1].name = "volte".into();
        assert!(matches!(Environment::new(c), Err(Error::Config(_))));
    }

    #[test]
    fn default_normalizers() {
        let c = EnvConfig::new(
            AllocationGrid::new(10.0, 1.0, 3).unwrap(),
            default_scenario(),
        );
        let n = c.normalizers();
        assert!((n[0] - 46.0 * 1000.0 / 80.0).abs() < 1e-9);
        assert!((n[1] - 46.0 * 1000.0 / 6.0).abs() < 1e-9);
        assert!((n[2] - 8.0 * 1000.0 / 180.0).abs() < 1e-9);
    }

    #[test]
    fn reset_is_deterministic() {
        let c = EnvConfig::new(
            AllocationGrid::new(10.0, 1.0, 3).unwrap(),
            default_scenario(),
        );
        let mut a = Environment::new(c.clone()).unwrap();
        let mut b = Environment::new(c).unwrap();
        let oa = a.reset(42).unwrap();
        assert_eq!(oa, b.reset(42).unwrap());
        assert_ne!(oa, b.reset(43).unwrap());
        assert!(oa.0.iter().all(|v| *v > 0.0));
    }
}
