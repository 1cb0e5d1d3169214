//! Named, independent random substreams.
//!
//! Every random decision in a run is drawn from a ChaCha8 stream keyed by
//! `(scenario seed, purpose tag, entity id)`. Streams are mutually
//! independent, so adding draws to one purpose never perturbs another, and
//! any component can be re-derived in isolation for debugging.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives the 32-byte ChaCha key for one `(seed, tag, id)` substream.
fn substream_key(seed: u64, tag: &str, id: u64) -> [u8; 32] {
    // Stable layout: seed | id | fnv1a(tag), each little-endian, zero padded.
    // FNV keeps the tag's contribution deterministic without pulling in a
    // hashing crate; tags are short static strings so collisions are moot.
    let mut fnv: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in tag.as_bytes() {
        fnv ^= u64::from(*byte);
        fnv = fnv.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&id.to_le_bytes());
    key[16..24].copy_from_slice(&fnv.to_le_bytes());
    key
}

/// Returns the substream for `(seed, tag, id)`.
#[must_use]
pub fn substream(seed: u64, tag: &str, id: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(substream_key(seed, tag, id))
}
