//! Seeded generator used for every random draw (oracle suites, fixtures).
//!
//! `Xoshiro256PlusPlus` seeded from a `u64` through SplitMix64, so a seed
//! reproduces the same stream on every platform.

use rand::SeedableRng;
pub use rand_xoshiro::Xoshiro256PlusPlus as Rng64;

pub fn seeded(seed: u64) -> Rng64 {
    Rng64::seed_from_u64(seed)
}
