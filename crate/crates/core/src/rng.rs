//! Counter-based stream derivation for reproducible randomness.
//!
//! Every consumer of randomness derives a fresh ChaCha12 stream from
//! `(seed, domain, indices...)`. Streams only depend on those keys, never on
//! call order, so per-sample work (augmentation, noise draws) can run in
//! parallel or be resumed mid-training without changing any outcome.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Stream domains. Keep values stable: they are part of the reproducibility
/// contract (checkpoints replay shuffles and augmentations by re-deriving
/// these streams).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    IdentityPrototypes = 1,
    SampleNoise = 2,
    Augment = 3,
    Shuffle = 4,
    EncoderInit = 5,
    ClassPrototypeInit = 6,
    PairProtocol = 7,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a deterministic ChaCha12 stream from a seed, a domain tag, and a
/// list of counters (e.g. `[epoch, sample_index]`).
pub fn stream(seed: u64, domain: Domain, indices: &[u64]) -> ChaCha12Rng {
    let mut state = seed;
    splitmix64(&mut state);
    state ^= (domain as u64).wrapping_mul(GOLDEN);
    splitmix64(&mut state);
    state ^= (indices.len() as u64).wrapping_add(1);
    for &idx in indices {
        state ^= idx.wrapping_mul(GOLDEN) ^ 0xD1B5_4A32_D192_ED03;
        splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}
