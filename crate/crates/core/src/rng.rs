//! Named random sub-streams derived from one run seed.
//!
//! Every consumer hashes `(seed, scope, name)` into its own ChaCha8 stream,
//! so extra draws in one stream never shift another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::victims::fnv1a64;

pub const SWARM: &str = "swarm";
pub const MUTATION: &str = "mutation";
pub const SAMPLING: &str = "sampling";
pub const GA: &str = "ga";
pub const MHM: &str = "mhm";
pub const RANDOM: &str = "random";

pub fn stream_seed(seed: u64, scope: &str, name: &str) -> u64 {
    let mut bytes = seed.to_le_bytes().to_vec();
    bytes.extend_from_slice(scope.as_bytes());
    bytes.push(0);
    bytes.extend_from_slice(name.as_bytes());
    fnv1a64(&bytes)
}

pub fn stream(seed: u64, scope: &str, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, scope, name))
}
