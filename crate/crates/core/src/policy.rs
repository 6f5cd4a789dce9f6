//! The predictive interface shared by every controller: a mean action plus
//! per-dimension predictive standard deviations.

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveOutput {
    pub mean: Vec<f64>,
    pub std_per_dim: Vec<f64>,
    /// Arithmetic mean of `std_per_dim`.
    pub sigma_scalar: f64,
}

impl PredictiveOutput {
    pub fn new(mean: Vec<f64>, std_per_dim: Vec<f64>) -> Self {
        debug_assert_eq!(mean.len(), std_per_dim.len());
        let sigma_scalar = scalarize(&std_per_dim);
        Self {
            mean,
            std_per_dim,
            sigma_scalar,
        }
    }

    /// A point prediction with no uncertainty.
    pub fn certain(mean: Vec<f64>) -> Self {
        let std = vec![0.0; mean.len()];
        Self::new(mean, std)
    }
}

/// Collapse per-action-dimension standard deviations into one number.
pub fn scalarize(std_per_dim: &[f64]) -> f64 {
    if std_per_dim.is_empty() {
        return 0.0;
    }
    std_per_dim.iter().sum::<f64>() / std_per_dim.len() as f64
}

/// What a controller sees at each step.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    /// Raw environment state.
    pub state: &'a [f64],
    /// Temporal-window features (unnormalized) ending at the current state.
    pub window: &'a [f64],
}

/// Anything that can drive an episode: learned policies and experts alike.
pub trait Controller {
    /// Reset per-episode state. `seed` identifies the episode's random stream.
    fn begin_episode(&mut self, _seed: u64) {}

    fn act(&mut self, obs: &Observation<'_>) -> Result<PredictiveOutput>;
}
