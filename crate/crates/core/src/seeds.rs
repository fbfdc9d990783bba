//! Deterministic seed substreams.
//!
//! Every source of randomness in a run is derived from the run seed plus a
//! static tag and two indices, e.g. `rng(seed, "train", round_counter,
//! client_id)`. Distinct (tag, a, b) triples yield independent streams, so
//! per-client work can run on any number of worker threads without
//! perturbing results, and two algorithms that make the same sequence of
//! derivation calls draw identical randomness (the property behind the
//! "K = 1 reduces to FedAvg bit-for-bit" contract).
//!
//! Derivation is a small splitmix64 sponge rather than `RngCore::next_u64`
//! chaining so that the mapping is documented, platform-independent, and
//! independent of how many draws earlier substreams consumed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One splitmix64 step: advances the state and returns the next output word.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the tag bytes, folding the tag into a single word.
fn tag_hash(tag: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for byte in tag.bytes() {
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Derive a single 64-bit seed word from (seed, tag, a, b).
pub fn derive(seed: u64, tag: &str, a: u64, b: u64) -> u64 {
    let mut state = seed;
    for component in [tag_hash(tag), a, b] {
        state ^= component;
        let _ = splitmix64(&mut state);
    }
    splitmix64(&mut state)
}

/// A fresh ChaCha8 stream for (seed, tag, a, b).
pub fn rng(seed: u64, tag: &str, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tag, a, b))
}
