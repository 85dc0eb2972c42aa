//! Sub-seed derivation.
//!
//! Every random decision in the pipeline draws from an RNG seeded by
//! `derive(global_seed, stage, ids)`, so results do not depend on thread
//! scheduling or iteration order. The mixing is FNV-1a over the stage name and
//! the little-endian item ids, followed by a SplitMix64 finalizer. Both are
//! fixed here and must not change without bumping artifact versions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a sub-seed from the global seed, a stage name and item ids.
pub fn derive(seed: u64, stage: &str, ids: &[u64]) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &seed.to_le_bytes());
    h = fnv1a(h, stage.as_bytes());
    h = fnv1a(h, &[0xff]);
    for id in ids {
        h = fnv1a(h, &id.to_le_bytes());
    }
    splitmix64(h)
}

/// Stable 64-bit hash of a string, used to fold string keys (forum ids) into
/// [`derive`] id lists.
pub fn hash_str(s: &str) -> u64 {
    splitmix64(fnv1a(FNV_OFFSET, s.as_bytes()))
}

/// RNG for one derived stream.
pub fn rng(seed: u64, stage: &str, ids: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, stage, ids))
}
