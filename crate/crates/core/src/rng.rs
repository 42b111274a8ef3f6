//! Counter-based random streams: every (replicate, island, level, ...) path
//! gets its own generator derived from the master seed, independent of
//! scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for the stream addressed by `path` under `master`.
pub fn stream(master: u64, path: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix(master ^ 0x6c62_272e_07bb_0142);
    for &p in path {
        h = splitmix(h ^ splitmix(p.wrapping_add(0x2545_f491_4f6c_dd1d)));
    }
    let mut seed = [0u8; 32];
    for (i, chunk) in seed.chunks_mut(8).enumerate() {
        h = splitmix(h.wrapping_add(i as u64));
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// A child seed, for handing a sub-task its own master seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut h = splitmix(master);
    for &p in path {
        h = splitmix(h ^ p);
    }
    h
}
