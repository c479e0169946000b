//! Slot-level downlink simulation of one base station.
//!
//! Every slot, each slice hands its whole band to one user picked round-robin
//! among users with queued packets. The scheduled user's rate is the Shannon
//! capacity of the slice band at that user's mean SNR scaled by a Rayleigh
//! power gain drawn fresh every slot. Arrivals are admitted at the start of
//! the slot they fall in; a user holding five undelivered packets drops new
//! arrivals until expiry or delivery frees a place.

use std::collections::VecDeque;
use std::io::Write;

use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::action_space::{Allocation, AllocationGrid};
use crate::error::{Error, Result};
use crate::rng::{self, StreamTag};
use crate::traffic::{Packet, SliceSpec, SliceTraffic, UserCarry};

/// Pending packets per user at which new arrivals are dropped.
pub const STALL_LIMIT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlotConfig {
    pub slot_ms: f64,
    pub slots_per_interval: usize,
}

impl Default for SlotConfig {
    fn default() -> Self {
        Self {
            slot_ms: 0.5,
            slots_per_interval: 2000,
        }
    }
}

impl SlotConfig {
    pub fn interval_ms(&self) -> f64 {
        self.slot_ms * self.slots_per_interval as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.slot_ms > 0.0 && self.slot_ms.is_finite()) || self.slots_per_interval == 0 {
            return Err(Error::config(format!(
                "slot length must be positive and an interval needs at least one slot, got {} ms x {}",
                self.slot_ms, self.slots_per_interval
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Fading {
    /// Unit-mean exponential power gain, i.i.d. per user per slot.
    Rayleigh,
    /// Fixed power gain; no draws are made.
    Constant { gain: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelModel {
    pub mean_snr_db: f64,
    /// Per-slice override of `mean_snr_db`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice_snr_db: Option<Vec<f64>>,
    pub fading: Fading,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            mean_snr_db: 20.0,
            slice_snr_db: None,
            fading: Fading::Rayleigh,
        }
    }
}

impl ChannelModel {
    pub fn validate(&self, slices: usize) -> Result<()> {
        if !self.mean_snr_db.is_finite() {
            return Err(Error::config("mean SNR must be finite"));
        }
        if let Some(per_slice) = &self.slice_snr_db {
            if per_slice.len() != slices || per_slice.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(format!(
                    "slice_snr_db needs {slices} finite entries"
                )));
            }
        }
        if let Fading::Constant { gain } = self.fading {
            if !(gain >= 0.0 && gain.is_finite()) {
                return Err(Error::config(format!(
                    "constant fading gain must be nonnegative, got {gain}"
                )));
            }
        }
        Ok(())
    }

    pub fn slice_snr_linear(&self, slice: usize) -> f64 {
        let db = self
            .slice_snr_db
            .as_ref()
            .map_or(self.mean_snr_db, |v| v[slice]);
        10f64.powf(db / 10.0)
    }
}

/// Shannon rate in bit/s for a band of `bandwidth_hz` at SNR `mean_snr_linear * gain`.
pub fn instantaneous_rate(bandwidth_hz: f64, mean_snr_linear: f64, gain: f64) -> f64 {
    bandwidth_hz * (1.0 + mean_snr_linear * gain).log2()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sla {
    pub rate_bps: f64,
    pub latency_ms: f64,
}

impl From<&SliceSpec> for Sla {
    fn from(spec: &SliceSpec) -> Self {
        Self {
            rate_bps: spec.sla_rate_bps,
            latency_ms: spec.sla_latency_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueuedPacket {
    pub packet: Packet,
    /// Start of the slot in which the packet was admitted.
    pub enqueued_ms: f64,
}

#[derive(Debug, Clone)]
pub struct UserQueue {
    pub pending: VecDeque<QueuedPacket>,
    upcoming: VecDeque<Packet>,
    carry: UserCarry,
    rng: rng::Rng,
}

impl UserQueue {
    pub fn new(carry: UserCarry, rng: rng::Rng) -> Self {
        Self {
            pending: VecDeque::new(),
            upcoming: VecDeque::new(),
            carry,
            rng,
        }
    }

    pub fn pending_bits(&self) -> f64 {
        self.pending.iter().map(|q| q.packet.remaining_bits).sum()
    }
}

/// The users of one slice and its round-robin position.
#[derive(Debug, Clone)]
pub struct SliceQueues {
    pub users: Vec<UserQueue>,
    /// Where the next round-robin search starts.
    pub next_user: usize,
}

impl SliceQueues {
    pub fn new(users: Vec<UserQueue>) -> Self {
        Self {
            users,
            next_user: 0,
        }
    }

    pub fn pending_packets(&self) -> usize {
        self.users.iter().map(|u| u.pending.len()).sum()
    }

    pub fn pending_bits(&self) -> f64 {
        self.users.iter().map(UserQueue::pending_bits).sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SlotOutcome {
    pub served_user: Option<usize>,
    pub rate_bps: f64,
    pub delivered_bits: f64,
    pub delivered_packets: u64,
    pub satisfied_packets: u64,
}

/// Serves one slot of a slice.
///
/// The next user (cyclically from `queues.next_user`) with a nonempty queue
/// gets the full band at gain `gains[user]`. Service drains the head-of-line
/// packet and cascades into later packets while slot capacity remains. A
/// completed packet is satisfied when its sojourn is within the SLA latency
/// and its size over sojourn meets the SLA rate. With every queue empty the
/// cursor does not move.
pub fn schedule_slot(
    queues: &mut SliceQueues,
    sla: Sla,
    bandwidth_hz: f64,
    mean_snr_linear: f64,
    gains: &[f64],
    slot_start_ms: f64,
    slot_ms: f64,
) -> SlotOutcome {
    let n = queues.users.len();
    let Some(user) = (0..n)
        .map(|i| (queues.next_user + i) % n)
        .find(|&u| !queues.users[u].pending.is_empty())
    else {
        return SlotOutcome::default();
    };
    queues.next_user = (user + 1) % n;

    let rate = instantaneous_rate(bandwidth_hz, mean_snr_linear, gains[user]);
    let mut outcome = SlotOutcome {
        served_user: Some(user),
        rate_bps: rate,
        ..SlotOutcome::default()
    };
    if rate <= 0.0 {
        return outcome;
    }
    let capacity = rate * slot_ms / 1000.0;
    let mut used = 0.0;
    let pending = &mut queues.users[user].pending;
    while let Some(head) = pending.front_mut() {
        let left = capacity - used;
        if left <= 0.0 {
            break;
        }
        if head.packet.remaining_bits > left {
            head.packet.remaining_bits -= left;
            outcome.delivered_bits += left;
            break;
        }
        used += head.packet.remaining_bits;
        outcome.delivered_bits += head.packet.remaining_bits;
        outcome.delivered_packets += 1;
        let done = pending.pop_front().expect("head exists");
        let completed_ms = slot_start_ms + used / rate * 1000.0;
        let sojourn_ms = completed_ms - done.enqueued_ms;
        if sojourn_ms <= sla.latency_ms
            && done.packet.size_bits >= sla.rate_bps * sojourn_ms / 1000.0
        {
            outcome.satisfied_packets += 1;
        }
    }
    outcome
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SliceStats {
    /// Every generated packet, including those dropped by the stall rule.
    pub arrived_packets: u64,
    pub arrived_bits: f64,
    pub delivered_packets: u64,
    /// Bits sent over the air, including partial service of packets that later expire.
    pub delivered_bits: f64,
    pub satisfied_packets: u64,
    pub expired_packets: u64,
    /// Unsent bits of expired packets.
    pub expired_bits: f64,
    pub stalled_arrivals: u64,
    pub stalled_bits: f64,
    pub pending_packets_start: u64,
    pub pending_bits_start: f64,
    pub pending_packets_end: u64,
    pub pending_bits_end: f64,
    /// Achieved rate of each user over the interval, bit/s.
    pub user_rate_bps: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IntervalStats {
    pub interval_ms: f64,
    pub slices: Vec<SliceStats>,
}

impl IntervalStats {
    pub fn delivered_bits(&self) -> f64 {
        self.slices.iter().map(|s| s.delivered_bits).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotTrace {
    pub interval: u64,
    pub slot: usize,
    pub time_ms: f64,
    pub slice: usize,
    pub served_user: Option<usize>,
    pub rate_bps: f64,
    pub delivered_bits: f64,
    pub delivered_packets: u64,
    pub satisfied_packets: u64,
    pub pending_packets: usize,
}

pub const TRACE_HEADER: &str =
    "interval,slot,time_ms,slice,served_user,rate_bps,delivered_bits,delivered_packets,satisfied_packets,pending_packets";

pub fn write_trace_csv<W: Write>(out: &mut W, rows: &[SlotTrace]) -> std::io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in rows {
        let served = r.served_user.map_or(String::from("-1"), |u| u.to_string());
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.interval,
            r.slot,
            r.time_ms,
            r.slice,
            served,
            r.rate_bps,
            r.delivered_bits,
            r.delivered_packets,
            r.satisfied_packets,
            r.pending_packets
        )?;
    }
    Ok(())
}

/// The base station: traffic sources, queues, and channel, advanced one
/// adjustment interval at a time.
#[derive(Debug, Clone)]
pub struct Simulator {
    grid: AllocationGrid,
    traffic: Vec<SliceTraffic>,
    slots: SlotConfig,
    channel: ChannelModel,
    queues: Vec<SliceQueues>,
    channel_rng: rng::Rng,
    interval: u64,
    trace: Option<Vec<SlotTrace>>,
}

impl Simulator {
    pub fn new(
        grid: AllocationGrid,
        slices: &[SliceSpec],
        slots: SlotConfig,
        channel: ChannelModel,
        seed: u64,
    ) -> Result<Self> {
        if slices.len() != grid.slices() {
            return Err(Error::config(format!(
                "{} slice specs for a grid of {} slices",
                slices.len(),
                grid.slices()
            )));
        }
        slots.validate()?;
        channel.validate(slices.len())?;
        let traffic = slices
            .iter()
            .cloned()
            .map(SliceTraffic::new)
            .collect::<Result<Vec<_>>>()?;
        let mut user_index = 0u32;
        let queues = traffic
            .iter()
            .map(|t| {
                let users = (0..t.spec().user_count)
                    .map(|_| {
                        let q = UserQueue::new(
                            t.initial_carry(),
                            rng::stream(seed, StreamTag::Traffic, user_index),
                        );
                        user_index += 1;
                        q
                    })
                    .collect();
                SliceQueues::new(users)
            })
            .collect();
        Ok(Self {
            grid,
            traffic,
            slots,
            channel,
            queues,
            channel_rng: rng::stream(seed, StreamTag::Channel, 0),
            interval: 0,
            trace: None,
        })
    }

    pub fn grid(&self) -> &AllocationGrid {
        &self.grid
    }

    pub fn slots(&self) -> &SlotConfig {
        &self.slots
    }

    pub fn slice_specs(&self) -> impl Iterator<Item = &SliceSpec> {
        self.traffic.iter().map(SliceTraffic::spec)
    }

    pub fn queues(&self) -> &[SliceQueues] {
        &self.queues
    }

    /// Number of intervals simulated so far.
    pub fn intervals_run(&self) -> u64 {
        self.interval
    }

    /// Starts recording per-slot traces; `take_trace` drains them.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn take_trace(&mut self) -> Vec<SlotTrace> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn run_interval(&mut self, allocation: &Allocation) -> Result<IntervalStats> {
        self.grid.check(allocation)?;
        let bandwidth_hz: Vec<f64> = allocation
            .bandwidths_mhz(&self.grid)
            .iter()
            .map(|w| w * 1e6)
            .collect();
        let slots_per_interval = self.slots.slots_per_interval;
        let slot_ms = self.slots.slot_ms;
        let first_slot = self.interval * slots_per_interval as u64;
        let t0 = first_slot as f64 * slot_ms;
        let t1 = (first_slot + slots_per_interval as u64) as f64 * slot_ms;

        let mut stats: Vec<SliceStats> = self
            .queues
            .iter()
            .map(|q| SliceStats {
                pending_packets_start: q.pending_packets() as u64,
                pending_bits_start: q.pending_bits(),
                user_rate_bps: vec![0.0; q.users.len()],
                ..SliceStats::default()
            })
            .collect();

        for (traffic, queues) in self.traffic.iter().zip(&mut self.queues) {
            for user in &mut queues.users {
                let fresh = traffic.generate_arrivals(t0, t1, &mut user.rng, &mut user.carry);
                user.upcoming.extend(fresh);
            }
        }

        let snr: Vec<f64> = (0..self.queues.len())
            .map(|s| self.channel.slice_snr_linear(s))
            .collect();
        let mut gains: Vec<Vec<f64>> = self
            .queues
            .iter()
            .map(|q| vec![0.0; q.users.len()])
            .collect();

        for slot in 0..slots_per_interval {
            let slot_index = first_slot + slot as u64;
            let slot_start = slot_index as f64 * slot_ms;
            let slot_end = (slot_index + 1) as f64 * slot_ms;

            for g in gains.iter_mut().flatten() {
                *g = match self.channel.fading {
                    Fading::Rayleigh => Exp1.sample(&mut self.channel_rng),
                    Fading::Constant { gain } => gain,
                };
            }

            for (s, queues) in self.queues.iter_mut().enumerate() {
                let st = &mut stats[s];
                let sla = Sla::from(self.traffic[s].spec());
                for user in &mut queues.users {
                    while user
                        .upcoming
                        .front()
                        .is_some_and(|p| p.arrival_ms < slot_end)
                    {
                        let packet = user.upcoming.pop_front().expect("front exists");
                        st.arrived_packets += 1;
                        st.arrived_bits += packet.size_bits;
                        if user.pending.len() >= STALL_LIMIT {
                            st.stalled_arrivals += 1;
                            st.stalled_bits += packet.size_bits;
                        } else {
                            user.pending.push_back(QueuedPacket {
                                packet,
                                enqueued_ms: slot_start,
                            });
                        }
                    }
                    while user
                        .pending
                        .front()
                        .is_some_and(|q| slot_start - q.enqueued_ms > sla.latency_ms)
                    {
                        let expired = user.pending.pop_front().expect("front exists");
                        st.expired_packets += 1;
                        st.expired_bits += expired.packet.remaining_bits;
                    }
                }

                let outcome = schedule_slot(
                    queues,
                    sla,
                    bandwidth_hz[s],
                    snr[s],
                    &gains[s],
                    slot_start,
                    slot_ms,
                );
                st.delivered_bits += outcome.delivered_bits;
                st.delivered_packets += outcome.delivered_packets;
                st.satisfied_packets += outcome.satisfied_packets;
                if let Some(u) = outcome.served_user {
                    st.user_rate_bps[u] += outcome.delivered_bits;
                }
                if let Some(trace) = self.trace.as_mut() {
                    trace.push(SlotTrace {
                        interval: self.interval,
                        slot,
                        time_ms: slot_start,
                        slice: s,
                        served_user: outcome.served_user,
                        rate_bps: outcome.rate_bps,
                        delivered_bits: outcome.delivered_bits,
                        delivered_packets: outcome.delivered_packets,
                        satisfied_packets: outcome.satisfied_packets,
                        pending_packets: queues.pending_packets(),
                    });
                }
            }
        }

        let interval_s = self.slots.interval_ms() / 1000.0;
        for (st, q) in stats.iter_mut().zip(&self.queues) {
            st.pending_packets_end = q.pending_packets() as u64;
            st.pending_bits_end = q.pending_bits();
            for r in &mut st.user_rate_bps {
                *r /= interval_s;
            }
        }
        self.interval += 1;
        Ok(IntervalStats {
            interval_ms: self.slots.interval_ms(),
            slices: stats,
        })
    }
}
