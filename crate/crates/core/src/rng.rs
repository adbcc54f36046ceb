//! Seed derivation for reproducible, order-independent random streams.
//!
//! Every stochastic choice in training (shuffling, objective mixing,
//! paraphrase sampling, dropout) draws from its own stream keyed on the run
//! seed plus a small tuple of counters, so results never depend on how many
//! draws some other component made before.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream labels, kept distinct so that two purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Shuffle = 1,
    Mix = 2,
    Paraphrase = 3,
    Dropout = 4,
    Split = 5,
    Synthetic = 6,
    Canonical = 7,
    Init = 8,
    Decode = 9,
    Bootstrap = 10,
    Select = 11,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed, a stream label and counters into one 64-bit key.
pub fn derive_seed(seed: u64, stream: Stream, counters: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ 0x5EED_0000_0000_0000);
    h = splitmix64(h ^ stream as u64);
    for &c in counters {
        h = splitmix64(h ^ c);
    }
    h
}

/// A ChaCha8 generator for the given key.
pub fn stream_rng(seed: u64, stream: Stream, counters: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, counters))
}
