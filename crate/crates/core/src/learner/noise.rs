//! Ornstein-Uhlenbeck exploration noise on the normalized action scale.

use super::ACT_DIM;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuNoise {
    pub theta: f64,
    pub sigma: f64,
    state: [f64; ACT_DIM],
}

impl OuNoise {
    pub fn new(theta: f64, sigma: f64) -> Self {
        Self {
            theta,
            sigma,
            state: [0.0; ACT_DIM],
        }
    }

    pub fn reset(&mut self) {
        self.state = [0.0; ACT_DIM];
    }

    pub fn state(&self) -> [f64; ACT_DIM] {
        self.state
    }

    /// One unit-step Euler update of `dx = -theta x dt + sigma dW`.
    pub fn sample<R: Rng>(&mut self, rng: &mut R) -> [f64; ACT_DIM] {
        for x in &mut self.state {
            let z: f64 = rng.sample(StandardNormal);
            *x += -self.theta * *x + self.sigma * z;
        }
        self.state
    }
}

/// Linear decay from `sigma0` to `floor` over the first `frac` of training.
pub fn annealed_sigma(sigma0: f64, floor: f64, episode: usize, episodes: usize, frac: f64) -> f64 {
    let horizon = (episodes as f64 * frac).max(1.0);
    floor + (sigma0 - floor) * (1.0 - episode as f64 / horizon).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mean_reverts_and_resets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut n = OuNoise::new(0.15, 0.0);
        n.state = [1.0, -1.0];
        let s = n.sample(&mut rng);
        assert!((s[0] - 0.85).abs() < 1e-15 && (s[1] + 0.85).abs() < 1e-15);
        n.reset();
        assert_eq!(n.state(), [0.0, 0.0]);
    }

    #[test]
    fn stationary_spread() {
        // stationary std of the AR(1) chain is sigma / sqrt(1 - (1 - theta)^2)
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut n = OuNoise::new(0.15, 0.2);
        let xs: Vec<f64> = (0..200_000).map(|_| n.sample(&mut rng)[0]).collect();
        let var = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        let expected = 0.04 / (1.0 - 0.85f64.powi(2));
        assert!((var / expected - 1.0).abs() < 0.1, "{var} vs {expected}");
    }

    #[test]
    fn annealing() {
        assert_eq!(annealed_sigma(0.2, 0.0, 0, 100, 0.5), 0.2);
        assert!((annealed_sigma(0.2, 0.0, 25, 100, 0.5) - 0.1).abs() < 1e-15);
        assert_eq!(annealed_sigma(0.2, 0.0, 60, 100, 0.5), 0.0);
        assert!((annealed_sigma(0.2, 0.05, 60, 100, 0.5) - 0.05).abs() < 1e-15);
        assert!((annealed_sigma(0.2, 0.05, 25, 100, 0.5) - 0.125).abs() < 1e-15);
    }
}
