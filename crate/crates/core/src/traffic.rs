//! Per-user packet arrival streams.
//!
//! Each user is an independent renewal process: inter-arrival gaps and packet
//! sizes are drawn from the slice's models using that user's own random
//! stream. Time is in milliseconds; sizes are in bytes in the models and in
//! bits once a packet exists.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InterArrivalModel {
    Uniform {
        min_ms: f64,
        max_ms: f64,
    },
    TruncatedPareto {
        exponent: f64,
        mean_ms: f64,
        max_ms: f64,
    },
    Exponential {
        mean_ms: f64,
    },
    /// Fixed gap; an infinite period yields a single packet at the first arrival.
    Constant {
        period_ms: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PacketSizeModel {
    Constant {
        bytes: f64,
    },
    TruncatedPareto {
        exponent: f64,
        mean_bytes: f64,
        max_bytes: f64,
    },
    TruncatedLognormal {
        mean_bytes: f64,
        std_bytes: f64,
        max_bytes: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceSpec {
    pub name: String,
    pub user_count: usize,
    pub inter_arrival: InterArrivalModel,
    pub packet_size: PacketSizeModel,
    pub sla_rate_bps: f64,
    pub sla_latency_ms: f64,
    /// Time of every user's first arrival. Infinite means the slice is silent.
    #[serde(default)]
    pub first_arrival_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub arrival_ms: f64,
    pub size_bits: f64,
    pub remaining_bits: f64,
}

impl Packet {
    pub fn new(arrival_ms: f64, size_bits: f64) -> Self {
        Self {
            arrival_ms,
            size_bits,
            remaining_bits: size_bits,
        }
    }
}

/// A validated distribution over positive reals, ready to draw from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampler {
    Constant(f64),
    Uniform { low: f64, high: f64 },
    Exponential { mean: f64 },
    BoundedPareto(BoundedPareto),
    TruncatedLognormal(TruncatedLognormal),
}

/// Pareto with shape `shape` restricted to `[scale, max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundedPareto {
    pub shape: f64,
    pub scale: f64,
    pub max: f64,
}

/// Lognormal with underlying normal `(mu, sigma)`, rejection-capped at `max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedLognormal {
    pub mu: f64,
    pub sigma: f64,
    pub max: f64,
}

impl BoundedPareto {
    /// Solves the scale so that the bounded mean equals `mean`, keeping
    /// `shape` and `max` as given.
    pub fn calibrated(shape: f64, mean: f64, max: f64) -> Result<Self> {
        if !(shape > 1.0 && mean > 0.0 && max > mean && max.is_finite()) {
            return Err(Error::config(format!(
                "truncated Pareto needs exponent > 1 and 0 < mean < max, got exponent {shape}, mean {mean}, max {max}"
            )));
        }
        let (mut lo, mut hi) = (mean * 1e-12, mean);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if Self::bounded_mean(shape, mid, max) < mean {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(Self {
            shape,
            scale: 0.5 * (lo + hi),
            max,
        })
    }

    fn bounded_mean(shape: f64, scale: f64, max: f64) -> f64 {
        let a = shape;
        let tail = (scale / max).powf(a);
        scale.powf(a) / (1.0 - tail) * a / (a - 1.0) * (scale.powf(1.0 - a) - max.powf(1.0 - a))
    }

    pub fn mean(&self) -> f64 {
        Self::bounded_mean(self.shape, self.scale, self.max)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // u in (0, 1] maps to (scale, max].
        let u = 1.0 - rng.random::<f64>();
        let tail = (self.scale / self.max).powf(self.shape);
        let x = self.scale / (1.0 - u * (1.0 - tail)).powf(1.0 / self.shape);
        x.min(self.max)
    }
}

impl TruncatedLognormal {
    /// Matches the untruncated lognormal to `mean` and `std`, then caps at `max`.
    pub fn from_moments(mean: f64, std: f64, max: f64) -> Result<Self> {
        if !(mean > 0.0 && std > 0.0 && max >= mean && max.is_finite()) {
            return Err(Error::config(format!(
                "truncated lognormal needs positive mean and std with max >= mean, got {mean}, {std}, {max}"
            )));
        }
        let variance = (1.0 + (std / mean).powi(2)).ln();
        Ok(Self {
            mu: mean.ln() - 0.5 * variance,
            sigma: variance.sqrt(),
            max,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            let x = (self.mu + self.sigma * z).exp();
            if x <= self.max {
                return x;
            }
        }
    }
}

impl Sampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Sampler::Constant(v) => v,
            Sampler::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            Sampler::Exponential { mean } => {
                let e: f64 = Exp1.sample(rng);
                mean * e
            }
            Sampler::BoundedPareto(p) => p.sample(rng),
            Sampler::TruncatedLognormal(l) => l.sample(rng),
        }
    }

    /// Largest value the sampler can return.
    pub fn upper_bound(&self) -> f64 {
        match *self {
            Sampler::Constant(v) => v,
            Sampler::Uniform { high, .. } => high,
            Sampler::Exponential { .. } => f64::INFINITY,
            Sampler::BoundedPareto(p) => p.max,
            Sampler::TruncatedLognormal(l) => l.max,
        }
    }
}

impl InterArrivalModel {
    pub fn sampler(&self) -> Result<Sampler> {
        match *self {
            InterArrivalModel::Uniform { min_ms, max_ms } => {
                if !(min_ms >= 0.0 && max_ms > min_ms && max_ms.is_finite()) {
                    return Err(Error::config(format!(
                        "uniform inter-arrival needs 0 <= min < max, got [{min_ms}, {max_ms}]"
                    )));
                }
                Ok(Sampler::Uniform {
                    low: min_ms,
                    high: max_ms,
                })
            }
            InterArrivalModel::TruncatedPareto {
                exponent,
                mean_ms,
                max_ms,
            } => Ok(Sampler::BoundedPareto(BoundedPareto::calibrated(
                exponent, mean_ms, max_ms,
            )?)),
            InterArrivalModel::Exponential { mean_ms } => {
                if !(mean_ms > 0.0 && mean_ms.is_finite()) {
                    return Err(Error::config(format!(
                        "exponential inter-arrival mean must be positive, got {mean_ms}"
                    )));
                }
                Ok(Sampler::Exponential { mean: mean_ms })
            }
            InterArrivalModel::Constant { period_ms } => {
                if period_ms.is_nan() || period_ms <= 0.0 {
                    return Err(Error::config(format!(
                        "constant inter-arrival period must be positive, got {period_ms}"
                    )));
                }
                Ok(Sampler::Constant(period_ms))
            }
        }
    }

    pub fn mean_ms(&self) -> f64 {
        match *self {
            InterArrivalModel::Uniform { min_ms, max_ms } => 0.5 * (min_ms + max_ms),
            InterArrivalModel::TruncatedPareto { mean_ms, .. } => mean_ms,
            InterArrivalModel::Exponential { mean_ms } => mean_ms,
            InterArrivalModel::Constant { period_ms } => period_ms,
        }
    }
}

impl PacketSizeModel {
    pub fn sampler(&self) -> Result<Sampler> {
        match *self {
            PacketSizeModel::Constant { bytes } => {
                if !(bytes > 0.0 && bytes.is_finite()) {
                    return Err(Error::config(format!(
                        "packet size must be positive, got {bytes}"
                    )));
                }
                Ok(Sampler::Constant(bytes))
            }
            PacketSizeModel::TruncatedPareto {
                exponent,
                mean_bytes,
                max_bytes,
            } => Ok(Sampler::BoundedPareto(BoundedPareto::calibrated(
                exponent, mean_bytes, max_bytes,
            )?)),
            PacketSizeModel::TruncatedLognormal {
                mean_bytes,
                std_bytes,
                max_bytes,
            } => Ok(Sampler::TruncatedLognormal(
                TruncatedLognormal::from_moments(mean_bytes, std_bytes, max_bytes)?,
            )),
        }
    }

    pub fn mean_bytes(&self) -> f64 {
        match *self {
            PacketSizeModel::Constant { bytes } => bytes,
            PacketSizeModel::TruncatedPareto { mean_bytes, .. } => mean_bytes,
            PacketSizeModel::TruncatedLognormal { mean_bytes, .. } => mean_bytes,
        }
    }
}

impl SliceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::config("slice name must not be empty"));
        }
        if self.user_count == 0 {
            return Err(Error::config(format!(
                "slice {} needs at least one user",
                self.name
            )));
        }
        if !(self.sla_rate_bps > 0.0 && self.sla_latency_ms > 0.0) {
            return Err(Error::config(format!(
                "slice {} SLA rate and latency must be positive",
                self.name
            )));
        }
        if self.first_arrival_ms.is_nan() || self.first_arrival_ms < 0.0 {
            return Err(Error::config(format!(
                "slice {} first arrival must be nonnegative",
                self.name
            )));
        }
        self.inter_arrival.sampler()?;
        self.packet_size.sampler()?;
        Ok(())
    }

    /// Expected packets per user over `interval_ms` from the model means.
    pub fn expected_packets_per_user(&self, interval_ms: f64) -> f64 {
        if !self.first_arrival_ms.is_finite() {
            return 0.0;
        }
        interval_ms / self.inter_arrival.mean_ms()
    }
}

/// Arrival-stream position of one user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserCarry {
    pub next_arrival_ms: f64,
}

/// A slice's models with their samplers resolved.
#[derive(Debug, Clone)]
pub struct SliceTraffic {
    spec: SliceSpec,
    inter_arrival: Sampler,
    packet_size: Sampler,
}

impl SliceTraffic {
    pub fn new(spec: SliceSpec) -> Result<Self> {
        spec.validate()?;
        let inter_arrival = spec.inter_arrival.sampler()?;
        let packet_size = spec.packet_size.sampler()?;
        Ok(Self {
            spec,
            inter_arrival,
            packet_size,
        })
    }

    pub fn spec(&self) -> &SliceSpec {
        &self.spec
    }

    pub fn inter_arrival(&self) -> &Sampler {
        &self.inter_arrival
    }

    pub fn packet_size(&self) -> &Sampler {
        &self.packet_size
    }

    pub fn initial_carry(&self) -> UserCarry {
        UserCarry {
            next_arrival_ms: self.spec.first_arrival_ms,
        }
    }

    /// Packets of one user arriving in `[t0_ms, t1_ms)`, advancing `carry`.
    ///
    /// Windows must be requested in order; arrivals scheduled before `t0_ms`
    /// are not replayed.
    pub fn generate_arrivals<R: Rng + ?Sized>(
        &self,
        t0_ms: f64,
        t1_ms: f64,
        rng: &mut R,
        carry: &mut UserCarry,
    ) -> Vec<Packet> {
        let mut out = Vec::new();
        while carry.next_arrival_ms < t1_ms {
            let at = carry.next_arrival_ms;
            let bytes = self.packet_size.sample(rng);
            if at >= t0_ms {
                out.push(Packet::new(at, bytes * 8.0));
            }
            carry.next_arrival_ms = at + self.inter_arrival.sample(rng);
        }
        out
    }
}

/// The three-slice scenario: VoLTE, video and URLLC with 100 users in all.
pub fn default_scenario() -> Vec<SliceSpec> {
    vec![
        SliceSpec {
            name: "volte".into(),
            user_count: 46,
            inter_arrival: InterArrivalModel::Uniform {
                min_ms: 0.0,
                max_ms: 160.0,
            },
            packet_size: PacketSizeModel::Constant { bytes: 40.0 },
            sla_rate_bps: 51e3,
            sla_latency_ms: 10.0,
            first_arrival_ms: 0.0,
        },
        SliceSpec {
            name: "video".into(),
            user_count: 46,
            inter_arrival: InterArrivalModel::TruncatedPareto {
                exponent: 1.2,
                mean_ms: 6.0,
                max_ms: 12.5,
            },
            packet_size: PacketSizeModel::TruncatedPareto {
                exponent: 1.2,
                mean_bytes: 100.0,
                max_bytes: 250.0,
            },
            sla_rate_bps: 5e6,
            sla_latency_ms: 10.0,
            first_arrival_ms: 0.0,
        },
        SliceSpec {
            name: "urllc".into(),
            user_count: 8,
            inter_arrival: InterArrivalModel::Exponential { mean_ms: 180.0 },
            packet_size: PacketSizeModel::TruncatedLognormal {
                mean_bytes: 2e6,
                std_bytes: 0.722e6,
                max_bytes: 5e6,
            },
            sla_rate_bps: 10e6,
            sla_latency_ms: 5.0,
            first_arrival_ms: 0.0,
        },
    ]
}

/// The default scenario with its user counts replaced.
pub fn scaled_scenario(user_counts: &[usize]) -> Result<Vec<SliceSpec>> {
    let mut specs = default_scenario();
    if user_counts.len() != specs.len() {
        return Err(Error::config(format!(
            "expected {} user counts, got {}",
            specs.len(),
            user_counts.len()
        )));
    }
    for (spec, &users) in specs.iter_mut().zip(user_counts) {
        spec.user_count = users;
    }
    Ok(specs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleSummary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

pub fn summarize<R: Rng + ?Sized>(sampler: &Sampler, count: usize, rng: &mut R) -> SampleSummary {
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..count {
        let x = sampler.sample(rng);
        sum += x;
        sum_sq += x * x;
        min = min.min(x);
        max = max.max(x);
    }
    let n = count.max(1) as f64;
    let mean = sum / n;
    SampleSummary {
        count,
        mean,
        std: (sum_sq / n - mean * mean).max(0.0).sqrt(),
        min,
        max,
    }
}
