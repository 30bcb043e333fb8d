//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a generator derived from a
//! `(seed, stream, counters...)` key rather than from shared mutable state.
//! Two workers that need the "same" randomness derive the same key, so results
//! do not depend on how work is split across threads or on the order in which
//! samples are visited.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named purposes, so that independent consumers never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Shuffle = 1,
    Augment = 2,
    Pretext = 3,
    Dropout = 4,
    Init = 5,
    Jigsaw = 6,
    Synth = 7,
    Split = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed, a stream tag and any number of counters into one 64-bit key.
pub fn derive_key(seed: u64, stream: Stream, counters: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(stream as u64));
    for &c in counters {
        h = splitmix64(h ^ splitmix64(c.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    h
}

pub fn stream_rng(seed: u64, stream: Stream, counters: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_key(seed, stream, counters))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_key_same_stream() {
        let a: Vec<u32> = stream_rng(7, Stream::Augment, &[1, 2])
            .random_iter()
            .take(8)
            .collect();
        let b: Vec<u32> = stream_rng(7, Stream::Augment, &[1, 2])
            .random_iter()
            .take(8)
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn keys_separate_streams_and_counters() {
        let k = derive_key(7, Stream::Augment, &[1, 2]);
        assert_ne!(k, derive_key(7, Stream::Dropout, &[1, 2]));
        assert_ne!(k, derive_key(7, Stream::Augment, &[2, 1]));
        assert_ne!(k, derive_key(8, Stream::Augment, &[1, 2]));
    }
}
