//! Discrete Ornstein-Uhlenbeck exploration noise with per-episode decay.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuConfig {
    pub theta: f64,
    pub sigma: f64,
    /// Long-run mean per action dimension (steering, speed).
    pub mu: [f64; 2],
    /// Episodes over which the emitted noise halves.
    pub half_life: f64,
    /// km/h of set-point noise per unit of the speed dimension's process.
    pub speed_scale_kmh: f64,
}

impl Default for OuConfig {
    fn default() -> Self {
        Self { theta: 0.6, sigma: 0.4, mu: [0.0, 0.0], half_life: 250.0, speed_scale_kmh: 1.0 }
    }
}

impl OuConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::config("[noise] theta must be in (0, 1]"));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::config("[noise] sigma must be non-negative"));
        }
        if !(self.half_life > 0.0) {
            return Err(Error::config("[noise] half_life must be positive"));
        }
        if !(self.speed_scale_kmh >= 0.0) {
            return Err(Error::config("[noise] speed_scale_kmh must be non-negative"));
        }
        Ok(())
    }
}

/// `x ← x + θ(μ − x) + σ·ε` per dimension; the emitted noise is `x` scaled by
/// `0.5^(episode / half_life)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OuNoise {
    pub x: Vec<f64>,
    pub mu: Vec<f64>,
    pub theta: f64,
    pub sigma: f64,
    pub half_life: f64,
    pub episode_index: u64,
}

impl OuNoise {
    pub fn new(mu: Vec<f64>, theta: f64, sigma: f64, half_life: f64) -> Self {
        Self { x: mu.clone(), mu, theta, sigma, half_life, episode_index: 0 }
    }

    pub fn from_config(cfg: &OuConfig) -> Self {
        Self::new(cfg.mu.to_vec(), cfg.theta, cfg.sigma, cfg.half_life)
    }

    pub fn decay(&self) -> f64 {
        decay(self.episode_index, self.half_life)
    }

    /// Advances the raw process one step and returns its new value.
    pub fn next_raw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> &[f64] {
        for (x, &mu) in self.x.iter_mut().zip(&self.mu) {
            let eps: f64 = rng.sample(StandardNormal);
            *x += self.theta * (mu - *x) + self.sigma * eps;
        }
        &self.x
    }

    /// Advances the process and returns the decayed noise.
    pub fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        let d = self.decay();
        self.next_raw(rng).iter().map(|x| d * x).collect()
    }

    /// Ends an episode: `x ← μ` and the episode index advances.
    pub fn reset(&mut self) {
        self.x.clone_from(&self.mu);
        self.episode_index += 1;
    }

    pub fn encode(&self, w: &mut Writer) {
        w.u32(self.x.len() as u32);
        for (&x, &mu) in self.x.iter().zip(&self.mu) {
            w.f64(x);
            w.f64(mu);
        }
        w.f64(self.theta);
        w.f64(self.sigma);
        w.f64(self.half_life);
        w.u64(self.episode_index);
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let n = r.u32()? as usize;
        let (mut x, mut mu) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            x.push(r.f64()?);
            mu.push(r.f64()?);
        }
        Ok(Self { x, mu, theta: r.f64()?, sigma: r.f64()?, half_life: r.f64()?, episode_index: r.u64()? })
    }
}

/// `0.5^(episode / half_life)`.
pub fn decay(episode: u64, half_life: f64) -> f64 {
    0.5f64.powf(episode as f64 / half_life)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_reversion_without_noise_hits_mu() {
        let mut ou = OuNoise::new(vec![0.3, -2.0], 1.0, 0.0, 250.0);
        ou.x = vec![5.0, 7.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = ou.next_raw(&mut rng).to_vec();
        // x + θ(μ - x) with θ = 1 is μ up to one rounding.
        assert!((x[0] - 0.3).abs() < 1e-12 && (x[1] + 2.0).abs() < 1e-12, "{x:?}");
    }

    #[test]
    fn decay_halves_every_half_life() {
        assert_eq!(decay(0, 250.0), 1.0);
        assert_eq!(decay(250, 250.0), 0.5);
        assert_eq!(decay(500, 250.0), 0.25);
        assert!(decay(251, 250.0) < decay(250, 250.0));
    }

    #[test]
    fn first_draw_after_reset_is_mu_plus_scaled_normal() {
        let mut ou = OuNoise::new(vec![0.5], 0.6, 0.4, 250.0);
        ou.x = vec![9.0];
        ou.reset();
        assert_eq!(ou.episode_index, 1);
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = a.clone();
        let eps: f64 = b.sample(StandardNormal);
        assert_eq!(ou.next_raw(&mut a)[0], 0.5 + 0.4 * eps);
    }
}
