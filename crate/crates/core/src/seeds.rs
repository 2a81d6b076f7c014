//! Labeled RNG substreams fanned out from one root seed.
//!
//! Every consumer (data generation, partitioning, threat schedule, per-client
//! training) draws from its own stream keyed by a label and up to two indices,
//! so changing one part of a scenario never perturbs the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Derives a 64-bit seed for `(root, label, a, b)`.
pub fn derive(root: u64, label: &str, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(root ^ fnv1a(label));
    h = splitmix64(h ^ a);
    splitmix64(h ^ b.rotate_left(32))
}

pub fn stream(root: u64, label: &str, a: u64, b: u64) -> SimRng {
    SimRng::seed_from_u64(derive(root, label, a, b))
}
