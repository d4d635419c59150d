//! Deterministic random-stream derivation.
//!
//! All randomness in a run flows from one 64-bit seed. Substreams are derived
//! by hashing the seed together with a domain tag and counters, so that e.g.
//! the client-sampling stream is independent of every per-client injection
//! stream and removing one consumer never perturbs another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains. Each domain owns an independent family of substreams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Problem generation (orthogonal factors, spectra, the minimizer).
    Problem = 1,
    /// Per-client generation randomness.
    Client = 2,
    /// tau-nice client sampling per round.
    Sampling = 3,
    /// Inexactness injection, per (round, client).
    Injection = 4,
    /// Starting-point sampling.
    Start = 5,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives the ChaCha stream for `(seed, domain, a, b)`.
pub fn substream(seed: u64, domain: Domain, a: u64, b: u64) -> ChaCha8Rng {
    // Chain all coordinates through the mixer so every word matters.
    let mut s = seed;
    for word in [domain as u64, a, b] {
        s = splitmix64(&mut s) ^ word.wrapping_mul(0xd1b54a32d192ed03);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Hashes an arbitrary byte string into a derived seed, used to give each
/// sweep cell a content-addressed stream that is independent of the cell's
/// position in the sweep.
pub fn seed_from_tag(seed: u64, tag: &str) -> u64 {
    let mut s = seed ^ 0x517cc1b727220a95;
    for &byte in tag.as_bytes() {
        s = splitmix64(&mut s) ^ u64::from(byte);
    }
    splitmix64(&mut s)
}
