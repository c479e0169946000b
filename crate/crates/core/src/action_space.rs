//! The discrete set of bandwidth allocations.
//!
//! An allocation assigns every slice a positive integer number of resolution
//! units, and the units add up to `floor(W / Δ)`. Allocations are stored as
//! integer multipliers and only converted to MHz at the boundary, so the sum
//! constraint holds exactly.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on the number of allocations `enumerate_actions` will materialize.
pub const ENUMERATION_LIMIT: u128 = 10_000_000;

// Guards `floor(W/Δ)` against a quotient that lands a hair below an integer.
const UNIT_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationGrid {
    total_mhz: f64,
    resolution_mhz: f64,
    slices: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Allocation {
    multipliers: Vec<u32>,
}

impl AllocationGrid {
    pub fn new(total_mhz: f64, resolution_mhz: f64, slices: usize) -> Result<Self> {
        if !(total_mhz.is_finite() && total_mhz > 0.0) {
            return Err(Error::config(format!(
                "total bandwidth must be positive, got {total_mhz}"
            )));
        }
        if !(resolution_mhz.is_finite() && resolution_mhz > 0.0) {
            return Err(Error::config(format!(
                "resolution must be positive, got {resolution_mhz}"
            )));
        }
        if slices == 0 {
            return Err(Error::config("slice count must be at least 1"));
        }
        let units = (total_mhz / resolution_mhz + UNIT_EPSILON).floor();
        if units > u32::MAX as f64 {
            return Err(Error::config(format!(
                "{units} resolution units do not fit the lattice"
            )));
        }
        if (units as usize) < slices {
            return Err(Error::config(format!(
                "floor(W/Δ) = {units} leaves no valid allocation for {slices} slices"
            )));
        }
        Ok(Self {
            total_mhz,
            resolution_mhz,
            slices,
        })
    }

    pub fn total_mhz(&self) -> f64 {
        self.total_mhz
    }

    pub fn resolution_mhz(&self) -> f64 {
        self.resolution_mhz
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    /// `floor(W / Δ)`, the number of resolution units shared by the slices.
    pub fn units(&self) -> u32 {
        (self.total_mhz / self.resolution_mhz + UNIT_EPSILON).floor() as u32
    }

    /// Number of valid allocations, `binom(floor(W/Δ) - 1, N - 1)`.
    ///
    /// Saturates at `u128::MAX` for grids far too large to enumerate.
    pub fn action_count(&self) -> u128 {
        binomial(self.units() as u128 - 1, self.slices as u128 - 1)
    }

    /// All valid allocations in lexicographic order of their multipliers.
    pub fn enumerate_actions(&self) -> Result<Vec<Allocation>> {
        let count = self.action_count();
        if count > ENUMERATION_LIMIT {
            return Err(Error::Capacity {
                count,
                limit: ENUMERATION_LIMIT,
            });
        }
        let mut out = Vec::with_capacity(count as usize);
        let mut current = vec![0u32; self.slices];
        compositions(self.units(), 0, &mut current, &mut out);
        debug_assert_eq!(out.len() as u128, count);
        Ok(out)
    }

    /// Position of `allocation` in `enumerate_actions` order, computed by
    /// counting the compositions that precede it.
    pub fn action_index(&self, allocation: &Allocation) -> Result<usize> {
        self.check(allocation)?;
        let n = self.slices;
        let mut remaining = self.units() as u128;
        let mut index = 0u128;
        for (pos, &k) in allocation.multipliers.iter().enumerate().take(n - 1) {
            let parts_after = (n - pos - 1) as u128;
            for v in 1..k as u128 {
                index += binomial(remaining - v - 1, parts_after - 1);
            }
            remaining -= k as u128;
        }
        usize::try_from(index)
            .map_err(|_| Error::Argument(format!("index {index} overflows usize")))
    }

    /// Inverse of `action_index`.
    pub fn action_at(&self, index: usize) -> Result<Allocation> {
        let count = self.action_count();
        if index as u128 >= count {
            return Err(Error::Argument(format!(
                "action index {index} out of range 0..{count}"
            )));
        }
        let n = self.slices;
        let mut remaining = self.units() as u128;
        let mut rest = index as u128;
        let mut multipliers = Vec::with_capacity(n);
        for pos in 0..n - 1 {
            let parts_after = (n - pos - 1) as u128;
            let mut v = 1u128;
            loop {
                let block = binomial(remaining - v - 1, parts_after - 1);
                if rest < block {
                    break;
                }
                rest -= block;
                v += 1;
            }
            multipliers.push(v as u32);
            remaining -= v;
        }
        multipliers.push(remaining as u32);
        Ok(Allocation { multipliers })
    }

    /// The `k` valid allocations nearest to `proto` (MHz, Euclidean), by
    /// nondecreasing distance with lexicographic tie-break.
    pub fn project_knn(&self, proto: &[f64], k: usize) -> Result<Vec<Allocation>> {
        ActionSet::new(*self)?.project_knn(proto, k)
    }

    /// Builds an allocation from integer multipliers, validating it against the grid.
    pub fn allocation(&self, multipliers: Vec<u32>) -> Result<Allocation> {
        let allocation = Allocation { multipliers };
        self.check(&allocation)?;
        Ok(allocation)
    }

    /// Builds an allocation from bandwidths in MHz; each must be a whole
    /// number of resolution units.
    pub fn allocation_from_mhz(&self, bandwidths: &[f64]) -> Result<Allocation> {
        let mut multipliers = Vec::with_capacity(bandwidths.len());
        for &w in bandwidths {
            let k = (w / self.resolution_mhz).round();
            if !w.is_finite()
                || k < 1.0
                || (k * self.resolution_mhz - w).abs() > 1e-6 * self.resolution_mhz.max(1.0)
            {
                return Err(Error::InvalidAction(format!(
                    "{w} MHz is not a positive multiple of {} MHz",
                    self.resolution_mhz
                )));
            }
            multipliers.push(k as u32);
        }
        self.allocation(multipliers)
    }

    pub fn check(&self, allocation: &Allocation) -> Result<()> {
        let m = &allocation.multipliers;
        if m.len() != self.slices {
            return Err(Error::InvalidAction(format!(
                "allocation has {} slices, grid has {}",
                m.len(),
                self.slices
            )));
        }
        if m.contains(&0) {
            return Err(Error::InvalidAction(format!(
                "{allocation} leaves a slice without bandwidth"
            )));
        }
        let sum: u64 = m.iter().map(|&k| k as u64).sum();
        if sum != self.units() as u64 {
            return Err(Error::InvalidAction(format!(
                "{allocation} uses {sum} units, grid has {}",
                self.units()
            )));
        }
        Ok(())
    }

    pub fn contains(&self, allocation: &Allocation) -> bool {
        self.check(allocation).is_ok()
    }
}

impl Allocation {
    pub fn multipliers(&self) -> &[u32] {
        &self.multipliers
    }

    pub fn len(&self) -> usize {
        self.multipliers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multipliers.is_empty()
    }

    /// Per-slice bandwidth in MHz on `grid`.
    pub fn bandwidths_mhz(&self, grid: &AllocationGrid) -> Vec<f64> {
        self.multipliers
            .iter()
            .map(|&k| k as f64 * grid.resolution_mhz)
            .collect()
    }

    /// Per-slice share of the total bandwidth, `w_i / W`.
    pub fn fractions(&self, grid: &AllocationGrid) -> Vec<f64> {
        self.bandwidths_mhz(grid)
            .into_iter()
            .map(|w| w / grid.total_mhz)
            .collect()
    }
}

impl fmt::Display for Allocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, k) in self.multipliers.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{k}")?;
        }
        write!(f, ")")
    }
}

/// A grid with its allocations materialized, for repeated projection.
#[derive(Debug, Clone)]
pub struct ActionSet {
    grid: AllocationGrid,
    actions: Vec<Allocation>,
    // Row-major lattice coordinates in MHz, one row per action.
    points: Vec<f64>,
}

impl ActionSet {
    pub fn new(grid: AllocationGrid) -> Result<Self> {
        let actions = grid.enumerate_actions()?;
        let points = actions
            .iter()
            .flat_map(|a| a.bandwidths_mhz(&grid))
            .collect();
        Ok(Self {
            grid,
            actions,
            points,
        })
    }

    pub fn grid(&self) -> &AllocationGrid {
        &self.grid
    }

    pub fn actions(&self) -> &[Allocation] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Squared Euclidean distance from `proto` to every action, in enumeration order.
    pub fn squared_distances(&self, proto: &[f64]) -> Result<Vec<f64>> {
        let n = self.grid.slices;
        if proto.len() != n {
            return Err(Error::shape(format!(
                "proto-action has {} entries, grid has {n} slices",
                proto.len()
            )));
        }
        let mut terms = vec![0.0; n];
        Ok(self
            .points
            .chunks_exact(n)
            .map(|point| squared_distance(point, proto, &mut terms))
            .collect())
    }

    pub fn project_knn(&self, proto: &[f64], k: usize) -> Result<Vec<Allocation>> {
        if k == 0 || k > self.actions.len() {
            return Err(Error::Argument(format!(
                "k = {k} outside 1..={} valid allocations",
                self.actions.len()
            )));
        }
        let distances = self.squared_distances(proto)?;
        if k == 1 {
            // First strict minimum keeps the lexicographically smallest tie.
            let mut best = 0;
            for (i, d) in distances.iter().enumerate().skip(1) {
                if d.total_cmp(&distances[best]) == Ordering::Less {
                    best = i;
                }
            }
            return Ok(vec![self.actions[best].clone()]);
        }
        let mut order: Vec<usize> = (0..distances.len()).collect();
        order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
        Ok(order[..k]
            .iter()
            .map(|&i| self.actions[i].clone())
            .collect())
    }

    pub fn nearest(&self, proto: &[f64]) -> Result<Allocation> {
        Ok(self.project_knn(proto, 1)?.remove(0))
    }
}

/// Sum of squared coordinate differences, added in ascending order so that
/// permuted points at equal distance produce bit-identical sums.
fn squared_distance(point: &[f64], proto: &[f64], terms: &mut [f64]) -> f64 {
    for ((t, p), q) in terms.iter_mut().zip(point).zip(proto) {
        let d = p - q;
        *t = d * d;
    }
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

fn compositions(remaining: u32, pos: usize, current: &mut Vec<u32>, out: &mut Vec<Allocation>) {
    let n = current.len();
    if pos == n - 1 {
        current[pos] = remaining;
        out.push(Allocation {
            multipliers: current.clone(),
        });
        return;
    }
    let slots_after = (n - pos - 1) as u32;
    for k in 1..=remaining - slots_after {
        current[pos] = k;
        compositions(remaining - k, pos + 1, current, out);
    }
}

/// Exact binomial coefficient; saturates on overflow.
pub fn binomial(n: u128, r: u128) -> u128 {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for i in 1..=r {
        // acc * (n - r + i) / i stays integral at every step.
        match acc.checked_mul(n - r + i) {
            Some(v) => acc = v / i,
            None => return u128::MAX,
        }
    }
    acc
}
