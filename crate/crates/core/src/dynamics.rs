//! Cross-node delay dynamics: a time-scheduled injected delay matrix, the
//! reserved destinations that bypass injection, and a seeded measurer that
//! reports the true delays plus a small amount of noise.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DelayMatrix, ModelError};

/// Upper bound on measurement noise magnitude.
pub const MAX_NOISE_MS: f64 = 1.5;
/// Default one-way delay between two distinct nodes before injection.
pub const DEFAULT_BASE_DELAY_MS: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("delay schedule is empty")]
    EmptySchedule,
    #[error("first activation time must be 0, got {0}")]
    FirstActivation(f64),
    #[error("activation times must be strictly increasing ({prev} then {next})")]
    NotIncreasing { prev: f64, next: f64 },
    #[error("phase `{label}` has a {actual}x{actual} matrix, expected {expected}x{expected}")]
    PhaseDimension {
        label: String,
        expected: usize,
        actual: usize,
    },
    #[error("update period must be > 0, got {0}")]
    UpdatePeriod(f64),
    #[error("matrix dimensions differ: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("time must be >= 0, got {0}")]
    NegativeTime(f64),
    #[error("noise magnitude must be in [0, {MAX_NOISE_MS}] ms, got {0}")]
    NoiseMagnitude(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayPhase {
    pub activation_s: f64,
    pub label: String,
    pub matrix: DelayMatrix,
}

/// Injected delay matrices keyed by activation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelaySchedule {
    phases: Vec<DelayPhase>,
    update_period_s: f64,
}

impl DelaySchedule {
    pub fn new(phases: Vec<DelayPhase>, update_period_s: f64) -> Result<Self, DynamicsError> {
        if !(update_period_s > 0.0) {
            return Err(DynamicsError::UpdatePeriod(update_period_s));
        }
        let first = phases.first().ok_or(DynamicsError::EmptySchedule)?;
        if first.activation_s != 0.0 {
            return Err(DynamicsError::FirstActivation(first.activation_s));
        }
        let dim = first.matrix.dim();
        for pair in phases.windows(2) {
            if !(pair[1].activation_s > pair[0].activation_s) {
                return Err(DynamicsError::NotIncreasing {
                    prev: pair[0].activation_s,
                    next: pair[1].activation_s,
                });
            }
        }
        if let Some(bad) = phases.iter().find(|p| p.matrix.dim() != dim) {
            return Err(DynamicsError::PhaseDimension {
                label: bad.label.clone(),
                expected: dim,
                actual: bad.matrix.dim(),
            });
        }
        Ok(Self {
            phases,
            update_period_s,
        })
    }

    /// A single phase active forever.
    pub fn constant(matrix: DelayMatrix, label: &str) -> Self {
        Self {
            phases: vec![DelayPhase {
                activation_s: 0.0,
                label: label.to_string(),
                matrix,
            }],
            update_period_s: f64::INFINITY,
        }
    }

    pub fn phases(&self) -> &[DelayPhase] {
        &self.phases
    }

    pub fn update_period_s(&self) -> f64 {
        self.update_period_s
    }

    pub fn dim(&self) -> usize {
        self.phases[0].matrix.dim()
    }

    /// Index of the phase in force at time `t`.
    pub fn phase_index(&self, t: f64) -> Result<usize, DynamicsError> {
        if !(t >= 0.0) {
            return Err(DynamicsError::NegativeTime(t));
        }
        Ok(self.phases.partition_point(|p| p.activation_s <= t) - 1)
    }

    /// The matrix of the latest phase whose activation time is <= `t`.
    pub fn active_matrix(&self, t: f64) -> Result<&DelayMatrix, DynamicsError> {
        Ok(&self.phases[self.phase_index(t)?].matrix)
    }
}

/// Destinations whose traffic goes through the untouched default channel.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReservedDestinations(BTreeSet<usize>);

impl ReservedDestinations {
    pub fn new(destinations: impl IntoIterator<Item = usize>) -> Self {
        Self(destinations.into_iter().collect())
    }

    pub fn contains(&self, destination: usize) -> bool {
        self.0.contains(&destination)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }
}

/// Effective delays: `base + injected`, except toward reserved destinations
/// where the base delay is kept untouched.
pub fn inject(
    base: &DelayMatrix,
    injected: &DelayMatrix,
    reserved: &ReservedDestinations,
) -> Result<DelayMatrix, DynamicsError> {
    let dim = base.dim();
    if injected.dim() != dim {
        return Err(DynamicsError::Dimension(dim, injected.dim()));
    }
    let mut data = Vec::with_capacity(dim * dim);
    for from in 0..dim {
        for to in 0..dim {
            let value = if from == to {
                0.0
            } else if reserved.contains(to) {
                base.get(from, to)
            } else {
                base.get(from, to) + injected.get(from, to)
            };
            data.push(value);
        }
    }
    Ok(DelayMatrix::new(dim, data)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseDistribution {
    /// Uniform on `[0, magnitude]`: measured delays never undershoot.
    Uniform,
    /// Zero-mean normal with sigma = magnitude / 3, truncated to `±magnitude`.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementNoise {
    pub distribution: NoiseDistribution,
    pub magnitude_ms: f64,
    pub seed: u64,
}

impl MeasurementNoise {
    pub fn new(distribution: NoiseDistribution, magnitude_ms: f64, seed: u64) -> Result<Self, DynamicsError> {
        if !(0.0..=MAX_NOISE_MS).contains(&magnitude_ms) {
            return Err(DynamicsError::NoiseMagnitude(magnitude_ms));
        }
        Ok(Self {
            distribution,
            magnitude_ms,
            seed,
        })
    }

    /// Uniform noise on [0, 1] ms.
    pub fn default_with_seed(seed: u64) -> Self {
        Self {
            distribution: NoiseDistribution::Uniform,
            magnitude_ms: 1.0,
            seed,
        }
    }
}

/// Owns one noise stream. Successive calls to [`DelayMeasurer::measure`]
/// draw fresh noise; two measurers built from the same seed agree exactly.
#[derive(Debug, Clone)]
pub struct DelayMeasurer {
    noise: MeasurementNoise,
    rng: ChaCha8Rng,
}

impl DelayMeasurer {
    pub fn new(noise: MeasurementNoise) -> Self {
        Self {
            noise,
            rng: ChaCha8Rng::seed_from_u64(noise.seed),
        }
    }

    fn sample(&mut self) -> f64 {
        let magnitude = self.noise.magnitude_ms;
        if magnitude == 0.0 {
            return 0.0;
        }
        match self.noise.distribution {
            NoiseDistribution::Uniform => self.rng.random_range(0.0..=magnitude),
            NoiseDistribution::Gaussian => {
                let normal = Normal::new(0.0, magnitude / 3.0).expect("sigma is positive");
                normal.sample(&mut self.rng).clamp(-magnitude, magnitude)
            }
        }
    }

    /// Truth plus noise on every off-diagonal cell, clamped at zero.
    pub fn measure(&mut self, truth: &DelayMatrix) -> DelayMatrix {
        let dim = truth.dim();
        let mut data = Vec::with_capacity(dim * dim);
        for from in 0..dim {
            for to in 0..dim {
                if from == to {
                    data.push(0.0);
                } else {
                    let noisy = truth.get(from, to) + self.sample();
                    data.push(noisy.max(0.0));
                }
            }
        }
        DelayMatrix::new(dim, data).expect("non-negative with zero diagonal by construction")
    }
}

/// One-shot measurement with a fresh stream seeded from `noise.seed`.
pub fn measure(truth: &DelayMatrix, noise: &MeasurementNoise) -> DelayMatrix {
    DelayMeasurer::new(*noise).measure(truth)
}
