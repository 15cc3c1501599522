//! Seeded randomness for workloads and fault sampling.
//!
//! The generator is SplitMix64 (Steele, Lea and Flood, 2014): state advances by
//! `0x9E3779B97F4A7C15`, output is the state mixed by the `murmur3`-style finalizer with
//! shifts 30, 27, 31 and multipliers `0xBF58476D1CE4E5B9`, `0x94D049BB133111EB`. Bounded
//! draws use rejection sampling on the top of the 64-bit range, so any implementation of
//! the same two functions reproduces a workload from its seed.

use rand_core::RngCore;
use rand_xoshiro::SplitMix64;

pub struct Rng(SplitMix64);

impl Rng {
    pub fn new(seed: u64) -> Self {
        use rand_core::SeedableRng;
        Rng(SplitMix64::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `0..n`. Draws `x` until `x < u64::MAX - u64::MAX % n`, then
    /// returns `x % n`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    /// Uniform in `lo..=hi`.
    pub fn range(&mut self, lo: u64, hi: u64) -> u64 {
        lo + self.below(hi - lo + 1)
    }

    pub fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len() as u64) as usize]
    }
}
