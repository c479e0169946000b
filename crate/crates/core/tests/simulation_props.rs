//! Traffic, link simulator and environment invariants.

use proptest::prelude::*;
use slicing_core::action_space::AllocationGrid;
use slicing_core::agents::equal_allocation;
use slicing_core::env::{compute_qoe, compute_se, EnvConfig, Environment, RewardWeights};
use slicing_core::link_sim::{ChannelModel, Fading, Simulator, SlotConfig, STALL_LIMIT};
use slicing_core::rng::{stream, StreamTag};
use slicing_core::traffic::{
    default_scenario, scaled_scenario, summarize, InterArrivalModel, PacketSizeModel, SliceSpec,
    SliceTraffic,
};

#[test]
fn truncated_samplers_respect_bounds_and_means() {
    for (i, spec) in default_scenario().into_iter().enumerate() {
        let t = SliceTraffic::new(spec.clone()).unwrap();
        for (j, (sampler, mean)) in [
            (t.inter_arrival(), spec.inter_arrival.mean_ms()),
            (t.packet_size(), spec.packet_size.mean_bytes()),
        ]
        .into_iter()
        .enumerate()
        {
            let mut rng = stream(77, StreamTag::Calibration, (i * 2 + j) as u32);
            let bound = sampler.upper_bound();
            let mut sum = 0.0;
            for n in 0..1_000_000 {
                let x = sampler.sample(&mut rng);
                assert!(
                    x <= bound && x >= 0.0,
                    "{} sampler {j}: {x} above {bound}",
                    spec.name
                );
                if n < 100_000 {
                    sum += x;
                }
            }
            let empirical = sum / 100_000.0;
            assert!(
                (empirical - mean).abs() <= 0.05 * mean,
                "{} sampler {j}: mean {empirical} vs {mean}",
                spec.name
            );
        }
    }
}

#[test]
fn summary_matches_direct_moments() {
    let t = SliceTraffic::new(default_scenario().remove(0)).unwrap();
    let s = summarize(
        t.inter_arrival(),
        200_000,
        &mut stream(1, StreamTag::Calibration, 0),
    );
    // Uniform[0, 160]: mean 80, std 160/sqrt(12).
    assert!((s.mean - 80.0).abs() < 0.5);
    assert!((s.std - 160.0 / 12f64.sqrt()).abs() < 0.5);
    assert!(s.min >= 0.0 && s.max <= 160.0);
}

fn reduced_sim(seed: u64, grid: AllocationGrid) -> Simulator {
    Simulator::new(
        grid,
        &scaled_scenario(&[10, 10, 2]).unwrap(),
        SlotConfig::default(),
        ChannelModel::default(),
        seed,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bits_are_conserved_and_queues_capped(seed in 0u64..10_000, picks in prop::collection::vec(0usize..36, 4)) {
        let grid = AllocationGrid::new(10.0, 1.0, 3).unwrap();
        let actions = grid.enumerate_actions().unwrap();
        let mut sim = reduced_sim(seed, grid);
        for p in picks {
            let stats = sim.run_interval(&actions[p]).unwrap();
            for s in &stats.slices {
                let inflow = s.arrived_bits + s.pending_bits_start;
                let outflow = s.delivered_bits + s.pending_bits_end + s.expired_bits + s.stalled_bits;
                prop_assert!((inflow - outflow).abs() <= 1e-9 * inflow.max(1.0), "{inflow} vs {outflow}");
                prop_assert!(s.satisfied_packets <= s.delivered_packets);
                prop_assert!(s.delivered_packets <= s.arrived_packets + s.pending_packets_start);
                prop_assert_eq!(
                    s.arrived_packets + s.pending_packets_start,
                    s.delivered_packets + s.pending_packets_end + s.expired_packets + s.stalled_arrivals
                );
            }
            for q in sim.queues() {
                for u in &q.users {
                    prop_assert!(u.pending.len() <= STALL_LIMIT);
                }
            }
        }
    }

    #[test]
    fn replay_is_deterministic(seed in 0u64..10_000, pick in 0usize..36) {
        let grid = AllocationGrid::new(10.0, 1.0, 3).unwrap();
        let a = grid.action_at(pick).unwrap();
        let mut x = reduced_sim(seed, grid);
        let mut y = reduced_sim(seed, grid);
        for _ in 0..2 {
            prop_assert_eq!(x.run_interval(&a).unwrap(), y.run_interval(&a).unwrap());
        }
    }

    #[test]
    fn rewards_recompute_from_metrics(seed in 0u64..10_000, picks in prop::collection::vec(0usize..36, 3)) {
        let grid = AllocationGrid::new(10.0, 1.0, 3).unwrap();
        let mut config = EnvConfig::new(grid, scaled_scenario(&[10, 10, 2]).unwrap());
        config.weights = RewardWeights { se_weight: 0.01, qoe_weight: 1.0 };
        let normalizers = config.normalizers();
        let mut env = Environment::new(config).unwrap();
        env.reset(seed).unwrap();
        for p in picks {
            let step = env.step(&grid.action_at(p).unwrap()).unwrap();
            let m = &step.metrics;
            let se = compute_se(&m.stats, 10e6, 1.0);
            let qoe = compute_qoe(&m.stats);
            prop_assert_eq!(m.se, se);
            prop_assert_eq!(&m.qoe, &qoe);
            prop_assert_eq!(step.reward, 0.01 * se + qoe.aggregate);
            prop_assert!(se >= 0.0);
            prop_assert!((0.0..=1.0).contains(&qoe.aggregate));
            prop_assert!(qoe.per_slice.iter().all(|q| (0.0..=1.0).contains(q)));
            for ((o, s), n) in step.next_observation.0.iter().zip(&m.stats.slices).zip(&normalizers) {
                prop_assert_eq!(*o, s.arrived_packets as f64 / n);
            }
        }
    }
}

fn single_user(period_ms: f64, bytes: f64) -> SliceSpec {
    SliceSpec {
        name: "solo".into(),
        user_count: 1,
        inter_arrival: InterArrivalModel::Constant { period_ms },
        packet_size: PacketSizeModel::Constant { bytes },
        sla_rate_bps: 1.0,
        sla_latency_ms: 1e9,
        first_arrival_ms: 0.0,
    }
}

#[test]
fn constant_gain_delivery_is_capacity_limited() {
    let grid = AllocationGrid::new(1.0, 1.0, 1).unwrap();
    let channel = ChannelModel {
        mean_snr_db: 10.0,
        slice_snr_db: None,
        fading: Fading::Constant { gain: 1.0 },
    };
    let rate = 1e6 * (1.0f64 + 10.0).log2();
    let slots = SlotConfig::default();
    let interval_s = slots.interval_ms() / 1000.0;
    let slot_capacity = rate * slots.slot_ms / 1000.0;
    // Light load: 200 B per ms. Heavy load: 2000 B per 0.5 ms exceeds capacity.
    for (period, bytes) in [(1.0, 200.0), (0.5, 2000.0), (3.0, 300.0)] {
        let mut sim = Simulator::new(
            grid,
            &[single_user(period, bytes)],
            slots,
            channel.clone(),
            5,
        )
        .unwrap();
        let a = grid.allocation(vec![1]).unwrap();
        for _ in 0..3 {
            let s = &sim.run_interval(&a).unwrap().slices[0];
            let deliverable = s.arrived_bits - s.stalled_bits + s.pending_bits_start;
            let expected = deliverable.min(rate * interval_s);
            assert!(
                (s.delivered_bits - expected).abs() <= slot_capacity,
                "period {period}: delivered {} vs {expected}",
                s.delivered_bits
            );
        }
    }
}

#[test]
fn more_bandwidth_never_delivers_less_on_average() {
    // The URLLC slice is backlogged, so its throughput tracks its share.
    let grid = AllocationGrid::new(10.0, 1.0, 3).unwrap();
    let mut totals = Vec::new();
    for urllc in 1..=8 {
        let a = grid.allocation(vec![1, 9 - urllc, urllc]).unwrap();
        let mut sum = 0.0;
        for seed in 0..8 {
            let mut sim = reduced_sim(seed, grid);
            sim.run_interval(&a).unwrap();
            sum += sim.run_interval(&a).unwrap().slices[2].delivered_bits;
        }
        totals.push(sum);
    }
    assert!(totals.windows(2).all(|w| w[1] > w[0]), "{totals:?}");
}

#[test]
fn episodes_replay_under_fixed_actions() {
    let grid = AllocationGrid::new(10.0, 1.0, 3).unwrap();
    let run = || {
        let mut env =
            Environment::new(EnvConfig::new(grid, scaled_scenario(&[10, 10, 2]).unwrap())).unwrap();
        let mut obs = vec![env.reset(42).unwrap()];
        let mut rows = Vec::new();
        for p in [0, 35, 7, 7, 20] {
            let step = env.step(&grid.action_at(p).unwrap()).unwrap();
            rows.push(step.metrics.csv_row());
            obs.push(step.next_observation);
        }
        (obs, rows)
    };
    assert_eq!(run(), run());
    assert_eq!(equal_allocation(&grid).unwrap().multipliers(), &[3, 3, 4]);
}
