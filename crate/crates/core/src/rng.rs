//! Seeded random streams.
//!
//! All randomness flows from a master `u64` seed. Independent streams for
//! folds, replicates or covariate points are derived by index so that
//! results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A stream that depends on `seed` and `index` only.
pub fn substream(seed: u64, index: u64) -> Rng {
    seeded(mix(seed ^ mix(index.wrapping_add(0x9E37_79B9_7F4A_7C15))))
}

/// Like [`substream`] with an extra label separating unrelated consumers.
pub fn labeled(seed: u64, label: &str, index: u64) -> Rng {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in label.bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3);
    }
    substream(seed ^ mix(h), index)
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
