//! Replayable randomness.
//!
//! Every random draw in the crate comes from a ChaCha8 generator. The key is
//! derived from `(seed, substream)` through a SplitMix64 finalizer and the
//! ChaCha stream id is set to the shot (or batch) index, so any individual
//! shot can be regenerated from `(seed, substream, index)` alone without
//! replaying the ones before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named substreams hanging off one experiment seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Substream {
    /// Training data: noise rates and labeled shots.
    Data,
    /// Parameter initialization.
    Init,
    /// Benchmark shots.
    Shots,
    /// Held-out evaluation shots.
    Eval,
}

impl Substream {
    fn tag(self) -> u64 {
        match self {
            Substream::Data => 0x6461_7461,
            Substream::Init => 0x696e_6974,
            Substream::Shots => 0x7368_6f74,
            Substream::Eval => 0x6576_616c,
        }
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for item `index` of `substream` under `seed`.
pub fn stream_rng(seed: u64, substream: Substream, index: u64) -> ChaCha8Rng {
    let key = splitmix64(seed ^ splitmix64(substream.tag()));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// Derives a child seed, e.g. one per benchmark grid point.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    splitmix64(seed ^ splitmix64(salt.wrapping_add(0x5eed)))
}
