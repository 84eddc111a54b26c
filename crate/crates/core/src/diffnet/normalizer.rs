//! Running observation normalizer.
//!
//! Observation components span several orders of magnitude (covariance
//! entries near 1 next to outputs near 1e-3), so policy and value inputs are
//! whitened with running statistics. Updates happen once per collection
//! round from the gathered batch and the statistics are frozen during the
//! round itself and at evaluation.

use serde::{Deserialize, Serialize};

const NORM_EPS: f64 = 1e-8;
const NORM_CLIP: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    pub mean: Vec<f64>,
    /// Sum of squared deviations (Welford M2).
    pub m2: Vec<f64>,
    pub count: f64,
}

impl ObsNormalizer {
    pub fn new(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], m2: vec![0.0; dim], count: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, obs: &[f64]) {
        debug_assert_eq!(obs.len(), self.mean.len());
        self.count += 1.0;
        for i in 0..obs.len() {
            let delta = obs[i] - self.mean[i];
            self.mean[i] += delta / self.count;
            self.m2[i] += delta * (obs[i] - self.mean[i]);
        }
    }

    pub fn update_batch<'a, I: IntoIterator<Item = &'a [f64]>>(&mut self, batch: I) {
        for obs in batch {
            self.update(obs);
        }
    }

    pub fn variance(&self, i: usize) -> f64 {
        if self.count < 2.0 {
            1.0
        } else {
            self.m2[i] / self.count
        }
    }

    /// Whitens and clips an observation; identity until two samples are seen.
    pub fn normalize(&self, obs: &[f64]) -> Vec<f64> {
        debug_assert_eq!(obs.len(), self.mean.len());
        if self.count < 2.0 {
            return obs.to_vec();
        }
        obs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let z = (x - self.mean[i]) / (self.variance(i) + NORM_EPS).sqrt();
                z.clamp(-NORM_CLIP, NORM_CLIP)
            })
            .collect()
    }
}
