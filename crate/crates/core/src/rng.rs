//! Deterministic, stateless stream derivation.
//!
//! Every random decision in the pipeline draws from a ChaCha8 stream keyed
//! by (root seed, context words). Nothing stores RNG state between steps, so
//! resuming a run from a checkpoint replays the exact same draws: the
//! context words (epoch, step, clip id, parameter path, ...) fully determine
//! the stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finaliser. Bijective on u64, used to mix context words into a
/// stream key.
#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// FNV-1a over the bytes, for keying streams by parameter path.
#[inline]
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in s.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Folds `words` into `root` with splitmix64 rounds. Order matters;
/// (root, words) -> seed is stable across runs and platforms.
pub fn derive_seed(root: u64, words: &[u64]) -> u64 {
    let mut s = splitmix64(root);
    for &w in words {
        s = splitmix64(s ^ splitmix64(w));
    }
    s
}

/// ChaCha8 stream for the given context. Callers pull as many draws as they
/// need; distinct contexts give independent streams.
pub fn stream(root: u64, words: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, words))
}

/// Stream keyed by a string path plus numeric context, for parameter init.
pub fn stream_for_path(root: u64, path: &str, words: &[u64]) -> ChaCha8Rng {
    let mut ctx = Vec::with_capacity(words.len() + 1);
    ctx.push(hash_str(path));
    ctx.extend_from_slice(words);
    stream(root, &ctx)
}
