//! Seeded PRNG plumbing. Every random draw in a run comes from one
//! xoshiro256** stream seeded through splitmix64 from the 64-bit run seed.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256StarStar;

pub type RunRng = Xoshiro256StarStar;

pub fn run_rng(seed: u64) -> RunRng {
    // `seed_from_u64` expands the seed with splitmix64.
    Xoshiro256StarStar::seed_from_u64(seed)
}

/// Independent seed for a named sub-stream (e.g. dataset subsetting) so that
/// drawing from it never shifts the main training stream.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
