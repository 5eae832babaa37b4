//! Keyed deterministic random streams.
//!
//! Every stream is ChaCha20 seeded with `SHA-256(domain || key || ids...)`,
//! where each id is a little-endian `u64`. Uniforms take the top 53 bits of a
//! `u64` draw; normals come in pairs from Box-Muller, so a stream of complex
//! normals is portable to any implementation of ChaCha20 and SHA-256.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rustfft::num_complex::Complex64;
use sha2::{Digest, Sha256};

pub fn derive_seed(domain: &str, key: &[u8], ids: &[u64]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(domain.as_bytes());
    h.update([0u8]);
    h.update(key);
    for id in ids {
        h.update(id.to_le_bytes());
    }
    h.finalize().into()
}

pub struct KeyedStream {
    rng: ChaCha20Rng,
}

impl KeyedStream {
    pub fn new(domain: &str, key: &[u8], ids: &[u64]) -> Self {
        Self::from_seed(derive_seed(domain, key, ids))
    }

    pub fn from_seed(seed: [u8; 32]) -> Self {
        Self { rng: ChaCha20Rng::from_seed(seed) }
    }

    pub fn from_u64(domain: &str, seed: u64) -> Self {
        Self::new(domain, &seed.to_le_bytes(), &[])
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Two independent standard normals.
    pub fn normal_pair(&mut self) -> (f64, f64) {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let t = 2.0 * std::f64::consts::PI * u2;
        (r * t.cos(), r * t.sin())
    }

    pub fn normal(&mut self) -> f64 {
        self.normal_pair().0
    }

    /// Complex normal with independent standard normal parts.
    pub fn complex_normal(&mut self) -> Complex64 {
        let (a, b) = self.normal_pair();
        Complex64::new(a, b)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }
}
