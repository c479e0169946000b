//! Lattice enumeration and projection against independent exact oracles.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use proptest::prelude::*;
use rand::Rng;
use slicing_core::action_space::{ActionSet, Allocation, AllocationGrid};
use slicing_core::rng::{stream, StreamTag};

/// `C(n, r)` by exact big-integer product.
fn big_binomial(n: u64, r: u64) -> BigUint {
    if r > n {
        return BigUint::from(0u32);
    }
    let mut acc = BigUint::from(1u32);
    for i in 0..r {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

/// Every tuple in `[1, K]^N` summing to `K`, scanned as an odometer.
fn brute_force_compositions(units: u32, n: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut digits = vec![1u32; n];
    loop {
        if digits.iter().sum::<u32>() == units {
            out.push(digits.clone());
        }
        let mut pos = n;
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            if digits[pos] < units {
                digits[pos] += 1;
                break;
            }
            digits[pos] = 1;
        }
    }
}

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// Exact squared distance between the lattice point (as stored in f64) and `proto`.
fn exact_distance(point: &[f64], proto: &[f64]) -> BigRational {
    point
        .iter()
        .zip(proto)
        .map(|(p, q)| {
            let d = exact(*p) - exact(*q);
            &d * &d
        })
        .fold(BigRational::from_integer(BigInt::from(0)), |a, b| a + b)
}

/// The `k` nearest actions by exact distance, ties to the lower enumeration index.
fn oracle_knn(
    grid: &AllocationGrid,
    actions: &[Allocation],
    proto: &[f64],
    k: usize,
) -> Vec<Allocation> {
    // Prune with a loose float pass (rounding error is far below the margin),
    // then rank the survivors exactly.
    let rough: Vec<f64> = actions
        .iter()
        .map(|a| {
            a.bandwidths_mhz(grid)
                .iter()
                .zip(proto)
                .map(|(p, q)| (p - q) * (p - q))
                .sum()
        })
        .collect();
    let mut sorted = rough.clone();
    sorted.sort_by(f64::total_cmp);
    let cutoff = sorted[k - 1] * (1.0 + 1e-9) + 1e-12;
    let mut scored: Vec<(BigRational, usize)> = actions
        .iter()
        .enumerate()
        .filter(|&(i, _)| rough[i] <= cutoff)
        .map(|(i, a)| (exact_distance(&a.bandwidths_mhz(grid), proto), i))
        .collect();
    scored.sort();
    scored[..k]
        .iter()
        .map(|&(_, i)| actions[i].clone())
        .collect()
}

fn grid_strategy() -> impl Strategy<Value = AllocationGrid> {
    (
        1usize..=4,
        prop::sample::select(vec![0.2, 0.5, 1.0, 2.0]),
        0u32..=20,
    )
        .prop_filter_map("needs at least one unit per slice", |(n, delta, units)| {
            if (units as usize) < n {
                return None;
            }
            let total = (units as f64 * delta * 1e6).round() / 1e6;
            AllocationGrid::new(total, delta, n).ok()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn count_matches_enumeration_and_oracle(grid in grid_strategy()) {
        let units = grid.units();
        let n = grid.slices();
        let actions = grid.enumerate_actions().unwrap();
        prop_assert_eq!(actions.len() as u128, grid.action_count());
        prop_assert_eq!(BigUint::from(grid.action_count()), big_binomial(units as u64 - 1, n as u64 - 1));
        let brute = brute_force_compositions(units, n);
        let listed: Vec<Vec<u32>> = actions.iter().map(|a| a.multipliers().to_vec()).collect();
        prop_assert_eq!(listed, brute);
    }

    #[test]
    fn index_inverts_enumeration(grid in grid_strategy()) {
        for (i, a) in grid.enumerate_actions().unwrap().iter().enumerate() {
            prop_assert_eq!(grid.action_index(a).unwrap(), i);
            prop_assert_eq!(&grid.action_at(i).unwrap(), a);
        }
    }

    #[test]
    fn projection_is_idempotent_on_valid_actions(grid in grid_strategy()) {
        let set = ActionSet::new(grid).unwrap();
        for a in set.actions() {
            prop_assert_eq!(&set.nearest(&a.bandwidths_mhz(&grid)).unwrap(), a);
        }
    }

    #[test]
    fn knn_output_is_sorted_and_valid(grid in grid_strategy(), seed in 0u64..1000, k in 1usize..8) {
        let set = ActionSet::new(grid).unwrap();
        let k = k.min(set.len());
        let mut rng = stream(seed, StreamTag::Calibration, 0);
        let proto: Vec<f64> = (0..grid.slices()).map(|_| rng.random_range(-2.0..grid.total_mhz() + 2.0)).collect();
        let out = set.project_knn(&proto, k).unwrap();
        prop_assert_eq!(out.len(), k);
        let d: Vec<BigRational> = out.iter().map(|a| exact_distance(&a.bandwidths_mhz(&grid), &proto)).collect();
        prop_assert!(d.windows(2).all(|w| w[0] <= w[1]));
        for a in &out {
            prop_assert!(grid.contains(a));
        }
    }
}

#[test]
fn knn_matches_exact_linear_scan() {
    let grid = AllocationGrid::new(10.0, 0.2, 3).unwrap();
    let set = ActionSet::new(grid).unwrap();
    let mut rng = stream(2024, StreamTag::Calibration, 0);
    for trial in 0..1000 {
        let proto: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..11.0)).collect();
        let k = 1 + trial % 5;
        assert_eq!(
            set.project_knn(&proto, k).unwrap(),
            oracle_knn(&grid, set.actions(), &proto, k),
            "proto {proto:?}"
        );
    }
}

#[test]
fn knn_ties_match_exact_oracle() {
    // Symmetric proto-actions put permuted lattice points at exactly equal distance.
    for (w, delta, n) in [
        (10.0, 0.2, 3),
        (10.0, 1.0, 3),
        (4.0, 1.0, 3),
        (6.0, 1.0, 4),
        (7.0, 0.5, 4),
    ] {
        let grid = AllocationGrid::new(w, delta, n).unwrap();
        let set = ActionSet::new(grid).unwrap();
        let mut protos = vec![vec![w / n as f64; n], vec![0.0; n], vec![w; n]];
        protos.push((0..n).map(|i| if i % 2 == 0 { 1.0 } else { 2.0 }).collect());
        for proto in protos {
            for k in [1, 2, 3, set.len().min(6)] {
                assert_eq!(
                    set.project_knn(&proto, k).unwrap(),
                    oracle_knn(&grid, set.actions(), &proto, k),
                    "grid ({w}, {delta}, {n}) proto {proto:?} k {k}"
                );
            }
        }
    }
}
