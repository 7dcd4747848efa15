//! Per-purpose random streams.
//!
//! Every generator in the crate draws from a ChaCha stream whose key is a
//! hash of `(root seed, purpose, indices)`. Trials can therefore be run in
//! any order, on any thread, and still reproduce bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share key material.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Dataset,
    MutantRow,
    PrivacyNoise,
    Trial,
    Permutation,
    Initialization,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Dataset => 0x6461_7461,
            Stream::MutantRow => 0x6d75_7461,
            Stream::PrivacyNoise => 0x6e6f_6973,
            Stream::Trial => 0x7472_6961,
            Stream::Permutation => 0x7065_726d,
            Stream::Initialization => 0x696e_6974,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a root seed, a purpose and any number of indices into a child seed.
pub fn derive_seed(root: u64, stream: Stream, indices: &[u64]) -> u64 {
    let mut h = splitmix64(root ^ splitmix64(stream.tag()));
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    h
}

pub fn stream_rng(root: u64, stream: Stream, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, stream, indices))
}
