//! Named, indexed random substreams derived from a single run seed.
//!
//! A substream is identified by `(seed, name, index)`. The name is hashed with
//! 64-bit FNV-1a, mixed into the seed with SplitMix64, and the result seeds a
//! ChaCha8 generator whose stream id is `index`. Streams used by the trainer:
//!
//! | name       | index                          |
//! |------------|--------------------------------|
//! | `dataset`  | example index                  |
//! | `init`     | 0 for θ, 1 for η, 2 for baseline |
//! | `rollout`  | `update * 2^20 + example`      |
//! | `batch`    | update index                   |
//! | `probe`    | probe invocation               |
//! | `eval`     | example index                  |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn fnv1a(name: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in name.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn substream(seed: u64, name: &str, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ fnv1a(name)));
    rng.set_stream(index);
    rng
}

/// Index of the rollout stream for one example within one update.
pub fn rollout_index(update: u64, example: u64) -> u64 {
    (update << 20) | (example & 0xF_FFFF)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_coordinates_same_stream() {
        let draw = |mut r: StreamRng| (0..8).map(|_| r.random::<u64>()).collect::<Vec<_>>();
        assert_eq!(draw(substream(7, "rollout", 3)), draw(substream(7, "rollout", 3)));
    }

    #[test]
    fn names_indices_and_seeds_separate_streams() {
        let first = |mut r: StreamRng| r.random::<u64>();
        let base = first(substream(7, "rollout", 3));
        assert_ne!(base, first(substream(7, "rollout", 4)));
        assert_ne!(base, first(substream(7, "probe", 3)));
        assert_ne!(base, first(substream(8, "rollout", 3)));
    }
}
