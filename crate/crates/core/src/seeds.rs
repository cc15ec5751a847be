//! Named sub-seed derivation.
//!
//! Every stochastic component gets its own stream derived from one master
//! seed, a label and an index, so that e.g. the workload of scenario 3 does
//! not change when the policy seed handling changes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const WORKLOAD: &str = "workload";
pub const NOISE: &str = "noise";
pub const POLICY: &str = "policy";
pub const EVOLUTION: &str = "evolution";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Derive a sub-seed for `(label, index)` from `master`.
pub fn derive(master: u64, label: &str, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ fnv1a(label)) ^ splitmix64(index.wrapping_add(1)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
