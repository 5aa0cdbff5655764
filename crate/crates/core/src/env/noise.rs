use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::geometry::{true_distance, wall_crossings, Point, Wall};
use crate::error::{Error, Result};

/// Range noise: Gaussian line-of-sight jitter plus a positive bias that
/// appears with a probability growing with the number of walls crossed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub los_stddev: f64,
    pub nlos_probability_per_wall: f64,
    pub nlos_bias_mean: f64,
    pub nlos_bias_stddev: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { los_stddev: 0.15, nlos_probability_per_wall: 0.6, nlos_bias_mean: 0.8, nlos_bias_stddev: 0.4 }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self { los_stddev: 0.0, nlos_probability_per_wall: 0.0, nlos_bias_mean: 0.0, nlos_bias_stddev: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.los_stddev >= 0.0) {
            errs.push(format!("los_stddev must be >= 0, got {}", self.los_stddev));
        }
        if !(0.0..=1.0).contains(&self.nlos_probability_per_wall) {
            errs.push(format!("nlos_probability_per_wall must be in [0, 1], got {}", self.nlos_probability_per_wall));
        }
        if !(self.nlos_bias_mean >= 0.0) {
            errs.push(format!("nlos_bias_mean must be >= 0, got {}", self.nlos_bias_mean));
        }
        if !(self.nlos_bias_stddev >= 0.0) {
            errs.push(format!("nlos_bias_stddev must be >= 0, got {}", self.nlos_bias_stddev));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Probability that a link crossing `crossings` walls is NLoS-biased.
    pub fn nlos_probability(&self, crossings: usize) -> f64 {
        1.0 - (1.0 - self.nlos_probability_per_wall).powi(crossings as i32)
    }
}

/// One noisy range reading, clamped at zero.
pub fn simulate_measurement(p: Point, anchor: Point, noise: &NoiseModel, walls: &[Wall], rng: &mut impl Rng) -> f64 {
    let mut d = true_distance(p, anchor);
    let e: f64 = StandardNormal.sample(rng);
    d += noise.los_stddev * e;
    let crossings = wall_crossings(p, anchor, walls);
    if crossings > 0 {
        let u: f64 = rng.random();
        if u < noise.nlos_probability(crossings) {
            let b: f64 = StandardNormal.sample(rng);
            d += (noise.nlos_bias_mean + noise.nlos_bias_stddev * b).abs();
        }
    }
    d.max(0.0)
}
