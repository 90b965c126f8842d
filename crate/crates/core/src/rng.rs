//! Seed splitting.
//!
//! Every source of randomness is derived from one root seed by mixing in a
//! stream label and a counter, so subsystems draw independent but
//! reproducible streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Derive the seed of stream `label`, instance `counter`, from `root`.
pub fn derive_seed(root: u64, label: &str, counter: u64) -> u64 {
    splitmix64(splitmix64(root ^ fnv1a(label)).wrapping_add(splitmix64(counter)))
}

pub fn stream(root: u64, label: &str, counter: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(root, label, counter))
}
