//! Seedable, portable randomness with a documented splitting rule.
//!
//! All sampling in this crate goes through ChaCha8 streams. A base seed
//! plus a substream index fully determine a generator, so batch work can
//! be farmed out to threads while staying bit-exact: example `i` of a batch
//! always draws from `substream(seed, i)` no matter which thread runs it.
//!
//! Splitting rule:
//! - `substream(seed, index)` = ChaCha8 seeded with `seed`, stream counter
//!   set to `index`.
//! - Composite jobs derive lane indices with [`mix`], a SplitMix64-style
//!   hash, so that e.g. the shuffle lane of a dataset can never collide
//!   with a per-example lane.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Lane offset reserved for dataset shuffling (kept far away from
/// per-example lanes, which start at 0).
pub const SHUFFLE_LANE: u64 = u64::MAX;

/// Returns the ChaCha8 generator for `(seed, index)`.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// SplitMix64 finalizer; the core of [`mix`].
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a sequence of lane words into a new 64-bit seed.
///
/// Used to derive independent seeds for nested jobs, e.g.
/// `mix(base_seed, &[delta_index, repeat])`. Changing any word changes the
/// result; repeats are isolated from each other by construction.
pub fn mix(seed: u64, lanes: &[u64]) -> u64 {
    let mut acc = splitmix64(seed ^ 0x6a09_e667_f3bc_c908);
    for &lane in lanes {
        acc = splitmix64(acc ^ splitmix64(lane));
    }
    acc
}

/// Hashes an arbitrary task key string together with a base seed.
///
/// The harness keys every trainable cell by a canonical string such as
/// `"parity|delta=0.85|cell=lstm|mode=ssas|rep=3"`; two experiments that
/// name the same cell therefore reuse the same seed and produce the same
/// model.
pub fn mix_str(seed: u64, key: &str) -> u64 {
    // FNV-1a over the key bytes, then SplitMix with the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in key.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    mix(seed, &[h])
}
