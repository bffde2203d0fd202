//! Deterministic random streams.
//!
//! Every stream is a PCG-64 (`Lcg128Xsl64`, via `rand_pcg`) seeded with
//! `seed_from_u64`. Per-task seeds come from mixing the base seed with a key
//! through the SplitMix64 finalizer, so parallel and serial schedules see the
//! same streams.

use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;

pub const GENERATOR_NAME: &str = "PCG-64 (Lcg128Xsl64, rand_pcg 0.10), seed_from_u64";
pub const GAUSSIAN_METHOD: &str = "Box-Muller (both outputs used) over 53-bit uniforms";
pub const SEED_DERIVATION: &str = "SplitMix64 finalizer folded over (base seed, key words)";

pub fn stream(seed: u64) -> Pcg64 {
    Pcg64::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one task identified by `key`.
pub fn derive_seed(base: u64, key: &[u64]) -> u64 {
    key.iter().fold(splitmix64(base), |acc, &word| {
        splitmix64(acc ^ splitmix64(word))
    })
}

/// Standard normal deviates by the Box-Muller transform.
pub struct Gaussian {
    rng: Pcg64,
    spare: Option<f64>,
}

impl Gaussian {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: stream(seed),
            spare: None,
        }
    }

    pub fn sample(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the log finite.
        let u1 = 1.0 - self.rng.random::<f64>();
        let u2: f64 = self.rng.random();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = self.sample());
    }
}
