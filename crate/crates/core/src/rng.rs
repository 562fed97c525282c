//! Seeded random streams.
//!
//! Every draw comes from ChaCha20 (`rand_chacha::ChaCha20Rng`) keyed by
//! `seed_from_u64(seed)` with an explicit stream number, so the numbers a
//! given `(seed, stream)` produces do not depend on thread scheduling or on
//! how many draws other streams made. Uniform variates use the top 53 bits of
//! `next_u64`: `u = (next_u64() >> 11) * 2^-53`, mapped affinely onto `[lo, hi)`.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

#[derive(Clone, Debug)]
pub struct CounterRng {
    inner: ChaCha20Rng,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    /// Uniform on `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.unit() * n as f64) as usize).min(n.saturating_sub(1))
    }

    /// Uniform point in the closed Euclidean ball of radius `r` in `dim` dimensions
    /// (rejection from the enclosing cube).
    pub fn in_ball(&mut self, dim: usize, r: f64) -> Vec<f64> {
        if r == 0.0 {
            return vec![0.0; dim];
        }
        loop {
            let v: Vec<f64> = (0..dim).map(|_| self.uniform(-r, r)).collect();
            if v.iter().map(|x| x * x).sum::<f64>() <= r * r {
                return v;
            }
        }
    }
}
