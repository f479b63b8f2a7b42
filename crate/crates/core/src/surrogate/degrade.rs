use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{convolve_separable, gaussian_kernel};
use crate::imaging::EdgeMap;

/// Brush-mark degradation: additive Gaussian pixel noise (0–255 units)
/// followed by a circularly symmetric Gaussian blur.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradeConfig {
    pub noise_mean: f64,
    /// Variance, not standard deviation: 100 means σ = 10 intensity units.
    pub noise_variance: f64,
    pub blur_kernel_width: usize,
    pub blur_sigma: f64,
    pub rng_seed: u64,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        DegradeConfig {
            noise_mean: 0.0,
            noise_variance: 100.0,
            blur_kernel_width: 5,
            blur_sigma: 1.0,
            rng_seed: 0,
        }
    }
}

impl DegradeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_variance >= 0.0) || !self.noise_variance.is_finite() || !self.noise_mean.is_finite() {
            return Err(Error::Parameter(format!(
                "noise variance must be finite and >= 0, got {}",
                self.noise_variance
            )));
        }
        if self.blur_kernel_width == 0 || self.blur_kernel_width.is_multiple_of(2) {
            return Err(Error::Parameter(format!(
                "blur kernel width must be odd and >= 1, got {}",
                self.blur_kernel_width
            )));
        }
        if !(self.blur_sigma >= 0.0) {
            return Err(Error::Parameter("blur sigma must be >= 0".into()));
        }
        Ok(())
    }

    pub fn kernel(&self) -> Vec<f32> {
        gaussian_kernel(self.blur_kernel_width, self.blur_sigma)
    }
}

/// Degrades with the RNG stream of image 0.
pub fn degrade(edge: &EdgeMap, cfg: &DegradeConfig) -> Result<EdgeMap> {
    degrade_indexed(edge, cfg, 0)
}

/// `clamp(blur(edge + noise))`, drawing noise from the stream derived from
/// `(cfg.rng_seed, index)` so per-image results do not depend on processing order.
pub fn degrade_indexed(edge: &EdgeMap, cfg: &DegradeConfig, index: u64) -> Result<EdgeMap> {
    cfg.validate()?;
    let (w, h) = (edge.width(), edge.height());
    let mut noisy = edge.values().to_vec();
    if cfg.noise_variance > 0.0 || cfg.noise_mean != 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        rng.set_stream(index);
        let normal = Normal::new(cfg.noise_mean / 255.0, cfg.noise_variance.sqrt() / 255.0)
            .map_err(|e| Error::Parameter(e.to_string()))?;
        for v in &mut noisy {
            *v += normal.sample(&mut rng) as f32;
        }
    }
    let blurred = convolve_separable(&noisy, w, h, &cfg.kernel());
    EdgeMap::new(w, h, blurred, edge.provenance())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Provenance;

    fn map(w: usize, h: usize, f: impl Fn(usize) -> f32) -> EdgeMap {
        EdgeMap::new(w, h, (0..w * h).map(f).collect(), Provenance::Surrogate).unwrap()
    }

    #[test]
    fn zero_noise_unit_kernel_is_identity() {
        let e = map(9, 7, |i| (i % 11) as f32 / 10.0);
        let cfg = DegradeConfig { noise_variance: 0.0, blur_kernel_width: 1, ..Default::default() };
        assert_eq!(degrade(&e, &cfg).unwrap(), e);
    }

    #[test]
    fn constant_survives_blur() {
        let e = map(10, 10, |_| 0.5);
        for width in [3, 5, 9] {
            let cfg = DegradeConfig { noise_variance: 0.0, blur_kernel_width: width, blur_sigma: 1.5, ..Default::default() };
            assert!(degrade(&e, &cfg).unwrap().values().iter().all(|&v| (v - 0.5).abs() < 1e-6));
        }
    }

    #[test]
    fn seeded_output_is_reproducible() {
        let e = map(16, 16, |i| (i % 3) as f32 / 3.0);
        let cfg = DegradeConfig { rng_seed: 42, ..Default::default() };
        assert_eq!(degrade(&e, &cfg).unwrap(), degrade(&e, &cfg).unwrap());
        assert_ne!(degrade_indexed(&e, &cfg, 1).unwrap(), degrade_indexed(&e, &cfg, 2).unwrap());
    }

    #[test]
    fn invalid_configs_rejected() {
        let e = map(2, 2, |_| 0.0);
        for cfg in [
            DegradeConfig { blur_kernel_width: 4, ..Default::default() },
            DegradeConfig { blur_kernel_width: 0, ..Default::default() },
            DegradeConfig { noise_variance: -1.0, ..Default::default() },
        ] {
            assert!(matches!(degrade(&e, &cfg), Err(Error::Parameter(_))));
        }
    }

    #[test]
    fn noise_variance_matches_blurred_noise_variance() {
        // Oracle: Var(blur(noise)) = σ² Σ k_ij² for i.i.d. noise and a separable
        // kernel (interior pixels only, away from reflected borders).
        let (w, h) = (400usize, 260usize);
        let clean = map(w, h, |_| 0.5);
        let k = DegradeConfig::default().kernel();
        let k2: f64 = k.iter().map(|&v| v as f64 * v as f64).sum::<f64>().powi(2);
        let sigma = 10.0 / 255.0;
        let expected = sigma * sigma * k2;
        for seed in [1u64, 2, 3] {
            let cfg = DegradeConfig { rng_seed: seed, ..Default::default() };
            let out = degrade(&clean, &cfg).unwrap();
            let mut diffs = Vec::new();
            for y in 2..h - 2 {
                for x in 2..w - 2 {
                    diffs.push(out.get(x, y) as f64 - 0.5);
                }
            }
            assert!(diffs.len() >= 100_000);
            let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
            let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64;
            assert!((var / expected - 1.0).abs() < 0.05, "seed {seed}: {var} vs {expected}");
        }
    }
}
