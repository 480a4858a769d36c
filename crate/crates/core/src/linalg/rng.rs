//! Seeded pseudo-random streams.
//!
//! The generator is xoshiro256** seeded through SplitMix64, so any language
//! can reproduce a stream from its 64-bit seed:
//!
//! ```text
//! splitmix64:  z = (x += 0x9E3779B97F4A7C15)
//!              z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!              z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//!              return z ^ (z >> 31)
//! state s[0..4] = four consecutive splitmix64 outputs
//!
//! xoshiro256**: result = rotl(s1 * 5, 7) * 9
//!               t = s1 << 17
//!               s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3; s2 ^= t
//!               s3 = rotl(s3, 45)
//! ```
//!
//! A unit draw is `(next_u64 >> 11) · 2⁻⁵³ ∈ [0, 1)`; a draw on `[lo, hi)` is
//! `lo + (hi − lo) · unit`.

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: Xoshiro256StarStar,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform index in `0..n` by multiply-shift on the high 64 bits.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher-Yates, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Derives an independent child stream, e.g. one per generated sample.
    pub fn split(&mut self) -> SeededRng {
        SeededRng::new(self.next_u64())
    }
}
