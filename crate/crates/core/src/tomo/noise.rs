use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Sinogram;
use crate::error::{Error, Result};

/// Additive white Gaussian measurement noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")));
        }
        Ok(NoiseSpec { sigma, seed })
    }
}

/// Adds i.i.d. `N(0, sigma^2)` to every bin. Same seed, same output.
pub fn add_noise(sino: &Sinogram, spec: NoiseSpec) -> Sinogram {
    let mut out = sino.clone();
    if spec.sigma == 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.sigma).expect("sigma validated non-negative");
    for v in out.data_mut() {
        *v += normal.sample(&mut rng);
    }
    out
}
