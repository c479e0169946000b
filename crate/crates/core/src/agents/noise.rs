//! Exploration schedules.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDistribution {
    #[default]
    Normal,
    /// Uniform with the same standard deviation as the normal draw, i.e.
    /// support `[-√3 σ, √3 σ]`.
    Uniform,
}

/// Linear decay `σ_0 · max(0, 1 - t / horizon)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule {
    pub distribution: NoiseDistribution,
    pub initial_scale: f64,
    pub decay_horizon: usize,
}

pub(crate) fn linear_decay(initial: f64, t: usize, horizon: usize) -> f64 {
    if horizon == 0 {
        return 0.0;
    }
    initial * (1.0 - t as f64 / horizon as f64).max(0.0)
}

impl NoiseSchedule {
    pub fn new(
        distribution: NoiseDistribution,
        initial_scale: f64,
        decay_horizon: usize,
    ) -> Result<Self> {
        if !(initial_scale.is_finite() && initial_scale >= 0.0) {
            return Err(Error::config(format!(
                "noise scale must be finite and non-negative, got {initial_scale}"
            )));
        }
        Ok(Self {
            distribution,
            initial_scale,
            decay_horizon,
        })
    }

    pub fn scale_at(&self, t: usize) -> f64 {
        linear_decay(self.initial_scale, t, self.decay_horizon)
    }

    /// One noise vector for episode `t`; exactly zero once the scale is zero,
    /// without consuming randomness.
    pub fn sample<R: Rng + ?Sized>(&self, t: usize, dim: usize, rng: &mut R) -> Vec<f64> {
        let sigma = self.scale_at(t);
        if sigma == 0.0 {
            return vec![0.0; dim];
        }
        match self.distribution {
            NoiseDistribution::Normal => (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    sigma * z
                })
                .collect::<Vec<f64>>(),
            NoiseDistribution::Uniform => {
                let half = 3f64.sqrt() * sigma;
                (0..dim).map(|_| rng.random_range(-half..=half)).collect()
            }
        }
    }
}

/// ε-greedy decay over the same horizon shape as the noise schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub initial: f64,
    pub decay_horizon: usize,
}

impl EpsilonSchedule {
    pub fn new(initial: f64, decay_horizon: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&initial) {
            return Err(Error::config(format!(
                "epsilon must lie in [0, 1], got {initial}"
            )));
        }
        Ok(Self {
            initial,
            decay_horizon,
        })
    }

    pub fn epsilon_at(&self, t: usize) -> f64 {
        linear_decay(self.initial, t, self.decay_horizon)
    }
}
